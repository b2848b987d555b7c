//! Encoders, class-text embeddings and similarity-based classification.
//!
//! [`EncoderPair`] is the seam for external backbones: anything that can
//! embed images and texts into a shared space and export its weights as a
//! [`ParameterSet`]. [`ReferenceEncoders`] is the small trainable pair used
//! for desk-scale runs.

pub mod nn;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::prompts::PromptSet;
use crate::weights::ParameterSet;

pub use nn::{EncoderConfig, Net};

/// Tolerance used when checking that rows are unit-normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

pub trait EncoderPair {
    fn embed_dim(&self) -> usize;
    /// Unnormalized image embeddings, one row per input row.
    fn encode_images(&self, pixels: ArrayView2<f64>) -> Result<Array2<f64>>;
    /// Unnormalized text embeddings, one row per text.
    fn encode_texts(&self, texts: &[&str]) -> Result<Array2<f64>>;
    /// Multiplier applied to cosine similarities in the contrastive objective.
    fn logit_scale(&self) -> f64;
    /// Linear classifier on normalized image embeddings, if the model has one.
    fn linear_head(&self) -> Option<Array2<f64>> {
        None
    }
    fn export_params(&self) -> ParameterSet;
}

pub fn cosine_similarity(z: ArrayView1<f64>, t: ArrayView1<f64>) -> Result<f64> {
    if z.len() != t.len() {
        return Err(Error::Degenerate(format!(
            "dimension mismatch: {} vs {}",
            z.len(),
            t.len()
        )));
    }
    let (nz, nt) = (z.dot(&z).sqrt(), t.dot(&t).sqrt());
    if !(nz > nn::MIN_NORM && nt > nn::MIN_NORM) {
        return Err(Error::Degenerate("cosine similarity of a zero vector".into()));
    }
    Ok((z.dot(&t) / (nz * nt)).clamp(-1.0, 1.0))
}

/// Row-wise L2 normalization; zero rows are an error.
pub fn normalize_rows(m: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = m.to_owned();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if !(n > nn::MIN_NORM) {
            return Err(Error::Degenerate(format!("row {i} has zero norm")));
        }
        row /= n;
    }
    Ok(out)
}

pub(crate) fn check_unit_rows(m: ArrayView2<f64>, what: &str) -> Result<()> {
    for (i, row) in m.rows().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::Normalization(format!("{what} row {i} has norm {n}")));
        }
    }
    Ok(())
}

/// One unit-norm text embedding per class: each template is encoded and
/// normalized, the class mean is taken, and the mean is renormalized.
pub fn build_class_text_embeddings<F>(prompts: &PromptSet, n_classes: usize, mut encode: F) -> Result<Array2<f64>>
where
    F: FnMut(&[&str]) -> Result<Array2<f64>>,
{
    prompts.check_covers(n_classes)?;
    let texts: Vec<&str> = prompts.templates().iter().map(|t| t.text.as_str()).collect();
    let encoded = normalize_rows(encode(&texts)?.view())?;
    let per_class = prompts.n_per_class();
    let dim = encoded.ncols();
    let mut out = Array2::zeros((n_classes, dim));
    for class in 0..n_classes {
        let rows = encoded.slice(ndarray::s![class * per_class..(class + 1) * per_class, ..]);
        let mean = rows.mean_axis(Axis(0)).expect("at least one template per class");
        let n = mean.dot(&mean).sqrt();
        if !(n > nn::MIN_NORM) {
            return Err(Error::Degenerate(format!("class {class} templates cancel out")));
        }
        out.row_mut(class).assign(&(&mean / n));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class_id: usize,
    pub score: f64,
}

fn argmax(scores: ArrayView1<f64>) -> Prediction {
    let mut best = Prediction {
        class_id: 0,
        score: scores[0],
    };
    for (class_id, &score) in scores.iter().enumerate().skip(1) {
        // strict comparison keeps the lowest id on ties
        if score > best.score {
            best = Prediction { class_id, score };
        }
    }
    best
}

/// Picks, for every image, the class with the highest cosine similarity.
pub fn zero_shot_classify(image_embs: ArrayView2<f64>, class_embs: ArrayView2<f64>) -> Result<Vec<Prediction>> {
    if class_embs.nrows() == 0 {
        return Err(Error::Coverage("no class embeddings".into()));
    }
    if image_embs.ncols() != class_embs.ncols() {
        return Err(Error::Degenerate(format!(
            "image dimension {} differs from class dimension {}",
            image_embs.ncols(),
            class_embs.ncols()
        )));
    }
    check_unit_rows(class_embs, "class embedding")?;
    let unit = normalize_rows(image_embs)?;
    let sims = unit.dot(&class_embs.t()).mapv(|s| s.clamp(-1.0, 1.0));
    Ok(sims.rows().into_iter().map(argmax).collect())
}

/// Anything that maps a batch of image rows to class predictions.
pub trait ImageClassifier {
    fn classify(&self, pixels: ArrayView2<f64>) -> Result<Vec<Prediction>>;

    /// Unit-norm image embeddings, for export.
    fn embed(&self, _pixels: ArrayView2<f64>) -> Result<Array2<f64>> {
        Err(Error::Config("this classifier does not expose embeddings".into()))
    }
}

/// The small trainable encoder pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEncoders {
    net: Net,
}

impl ReferenceEncoders {
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            net: Net::init(cfg, seed)?,
        })
    }

    pub fn from_params(params: &ParameterSet) -> Result<Self> {
        Ok(Self {
            net: Net::from_params(params)?,
        })
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    pub fn config(&self) -> EncoderConfig {
        self.net.config()
    }

    /// Sets the linear head to the scaled class-text embeddings, so that the
    /// head reproduces zero-shot predictions before any training.
    pub fn with_zero_shot_head(mut self, prompts: &PromptSet) -> Result<Self> {
        let n_classes = self.net.head.nrows();
        let class_embs = build_class_text_embeddings(prompts, n_classes, |t| self.encode_texts(t))?;
        self.net.head = class_embs * self.logit_scale();
        Ok(self)
    }

    pub fn class_text_embeddings(&self, prompts: &PromptSet) -> Result<Array2<f64>> {
        build_class_text_embeddings(prompts, self.net.head.nrows(), |t| self.encode_texts(t))
    }
}

impl EncoderPair for ReferenceEncoders {
    fn embed_dim(&self) -> usize {
        self.net.image.output_dim()
    }

    fn encode_images(&self, pixels: ArrayView2<f64>) -> Result<Array2<f64>> {
        if pixels.ncols() != self.net.image.input_dim() {
            return Err(Error::Data(format!(
                "images have {} values, encoder expects {}",
                pixels.ncols(),
                self.net.image.input_dim()
            )));
        }
        Ok(self.net.image.forward_raw(pixels).1)
    }

    fn encode_texts(&self, texts: &[&str]) -> Result<Array2<f64>> {
        let features = nn::text_features(texts, self.net.text.input_dim());
        Ok(self.net.text.forward_raw(features.view()).1)
    }

    fn logit_scale(&self) -> f64 {
        self.net.logit_scale.exp()
    }

    fn linear_head(&self) -> Option<Array2<f64>> {
        Some(self.net.head.clone())
    }

    fn export_params(&self) -> ParameterSet {
        self.net.to_params()
    }
}

/// How a classifier turns image embeddings into class scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    /// Cosine similarity against class-text embeddings built from a prompt set.
    Prompts,
    /// Linear head logits on normalized embeddings.
    Linear,
}

pub struct Classifier<E> {
    encoders: E,
    weights: Array2<f64>,
    readout: Readout,
}

impl<E: EncoderPair> Classifier<E> {
    pub fn from_prompts(encoders: E, prompts: &PromptSet, n_classes: usize) -> Result<Self> {
        let weights = build_class_text_embeddings(prompts, n_classes, |t| encoders.encode_texts(t))?;
        Ok(Self {
            encoders,
            weights,
            readout: Readout::Prompts,
        })
    }

    pub fn from_head(encoders: E) -> Result<Self> {
        let weights = encoders
            .linear_head()
            .ok_or_else(|| Error::Config("encoders have no linear head".into()))?;
        Ok(Self {
            encoders,
            weights,
            readout: Readout::Linear,
        })
    }

    pub fn readout(&self) -> Readout {
        self.readout
    }

    pub fn class_weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn encoders(&self) -> &E {
        &self.encoders
    }
}

impl<E: EncoderPair> ImageClassifier for Classifier<E> {
    fn classify(&self, pixels: ArrayView2<f64>) -> Result<Vec<Prediction>> {
        let embs = self.encoders.encode_images(pixels)?;
        match self.readout {
            Readout::Prompts => zero_shot_classify(embs.view(), self.weights.view()),
            Readout::Linear => {
                let logits = normalize_rows(embs.view())?.dot(&self.weights.t());
                Ok(logits.rows().into_iter().map(argmax).collect())
            }
        }
    }

    fn embed(&self, pixels: ArrayView2<f64>) -> Result<Array2<f64>> {
        normalize_rows(self.encoders.encode_images(pixels)?.view())
    }
}

/// Converts 8-bit RGB values to encoder inputs centred on zero.
pub fn pixels_to_inputs(rgb: &[u8]) -> Array1<f64> {
    rgb.iter().map(|&v| v as f64 / 255.0 - 0.5).collect()
}
