//! Two-layer tanh MLPs with hand-written backward passes, and the f64
//! working copy of a full parameter set used during training.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::weights::{ParameterSet, Tensor};

pub const IMAGE_PREFIX: &str = "image";
pub const TEXT_PREFIX: &str = "text";
pub const LOGIT_SCALE: &str = "logit_scale";
pub const HEAD_WEIGHT: &str = "head.weight";
const PARAM_COUNT: usize = 10;

/// Rows with a smaller norm are treated as degenerate.
pub(crate) const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Activations kept from the forward pass.
pub struct MlpCache {
    hidden: Array2<f64>,
    norms: Array1<f64>,
    pub unit: Array2<f64>,
}

impl Mlp {
    fn init(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut draw = |rows: usize, cols: usize| {
            let normal = Normal::new(0.0, (1.0 / cols as f64).sqrt()).expect("valid std");
            Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
        };
        let w1 = draw(hidden, input);
        let w2 = draw(output, hidden);
        Self {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(output),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    /// Raw (unnormalized) outputs for a batch of rows.
    pub fn forward_raw(&self, x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut hidden = x.dot(&self.w1.t());
        hidden += &self.b1;
        hidden.mapv_inplace(f64::tanh);
        let mut out = hidden.dot(&self.w2.t());
        out += &self.b2;
        (hidden, out)
    }

    /// Forward pass followed by row-wise L2 normalization.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<MlpCache> {
        let (hidden, mut out) = self.forward_raw(x);
        let norms = out.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        if let Some(i) = norms.iter().position(|&n| !(n > MIN_NORM)) {
            return Err(Error::Degenerate(format!("embedding row {i} has zero norm")));
        }
        Zip::from(out.rows_mut())
            .and(&norms)
            .for_each(|mut row, &n| row /= n);
        Ok(MlpCache {
            hidden,
            norms,
            unit: out,
        })
    }

    /// Accumulates parameter gradients into `grads` given the gradient with
    /// respect to the normalized outputs.
    pub fn backward(&self, x: ArrayView2<f64>, cache: &MlpCache, d_unit: ArrayView2<f64>, grads: &mut Mlp) {
        // d/de of e/|e|: (g - u (u.g)) / |e|
        let proj = (&cache.unit * &d_unit).sum_axis(Axis(1));
        let mut d_out = d_unit.to_owned();
        Zip::from(d_out.rows_mut())
            .and(cache.unit.rows())
            .and(&proj)
            .and(&cache.norms)
            .for_each(|mut g, u, &p, &n| {
                g.scaled_add(-p, &u);
                g /= n;
            });
        grads.w2 += &d_out.t().dot(&cache.hidden);
        grads.b2 += &d_out.sum_axis(Axis(0));
        let mut d_hidden = d_out.dot(&self.w2);
        Zip::from(&mut d_hidden)
            .and(&cache.hidden)
            .for_each(|g, &h| *g *= 1.0 - h * h);
        grads.w1 += &d_hidden.t().dot(&x);
        grads.b1 += &d_hidden.sum_axis(Axis(0));
    }

    fn export(&self, prefix: &str, set: ParameterSet) -> Result<ParameterSet> {
        set.with(format!("{prefix}.fc1.weight"), matrix_tensor(&self.w1))?
            .with(format!("{prefix}.fc1.bias"), vector_tensor(&self.b1))?
            .with(format!("{prefix}.fc2.weight"), matrix_tensor(&self.w2))?
            .with(format!("{prefix}.fc2.bias"), vector_tensor(&self.b2))
    }

    fn import(prefix: &str, set: &ParameterSet) -> Result<Self> {
        let w1 = matrix(set, &format!("{prefix}.fc1.weight"))?;
        let b1 = vector(set, &format!("{prefix}.fc1.bias"))?;
        let w2 = matrix(set, &format!("{prefix}.fc2.weight"))?;
        let b2 = vector(set, &format!("{prefix}.fc2.bias"))?;
        if b1.len() != w1.nrows() || w2.ncols() != w1.nrows() || b2.len() != w2.nrows() {
            return Err(Error::InvalidParams(format!("inconsistent layer shapes under `{prefix}`")));
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }
}

fn matrix_tensor(m: &Array2<f64>) -> Tensor {
    Tensor::new(vec![m.nrows(), m.ncols()], m.iter().map(|&v| v as f32).collect())
        .expect("shape matches")
}

fn vector_tensor(v: &Array1<f64>) -> Tensor {
    Tensor::new(vec![v.len()], v.iter().map(|&x| x as f32).collect()).expect("shape matches")
}

fn lookup<'a>(set: &'a ParameterSet, name: &str) -> Result<&'a Tensor> {
    set.get(name)
        .ok_or_else(|| Error::InvalidParams(format!("missing parameter `{name}`")))
}

fn matrix(set: &ParameterSet, name: &str) -> Result<Array2<f64>> {
    let t = lookup(set, name)?;
    match t.shape() {
        &[r, c] => Ok(Array2::from_shape_vec((r, c), t.data().iter().map(|&v| v as f64).collect())
            .expect("shape matches")),
        other => Err(Error::InvalidParams(format!("`{name}` must be a matrix, has shape {other:?}"))),
    }
}

fn vector(set: &ParameterSet, name: &str) -> Result<Array1<f64>> {
    let t = lookup(set, name)?;
    match t.shape() {
        &[_] => Ok(t.data().iter().map(|&v| v as f64).collect()),
        other => Err(Error::InvalidParams(format!("`{name}` must be a vector, has shape {other:?}"))),
    }
}

/// Architecture of the reference encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    /// Side of the square RGB input raster.
    pub image_side: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    /// Hash buckets of the bag-of-tokens text featurizer.
    pub vocab_buckets: usize,
    pub n_classes: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_side: 32,
            hidden: 64,
            embed_dim: 64,
            vocab_buckets: 512,
            n_classes: crate::prompts::CANONICAL_CLASSES,
        }
    }
}

impl EncoderConfig {
    pub fn image_inputs(&self) -> usize {
        3 * self.image_side * self.image_side
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(Error::Range("embedding dimension must be at least 2".into()));
        }
        if self.image_side == 0 || self.hidden == 0 || self.vocab_buckets == 0 || self.n_classes < 2 {
            return Err(Error::Range(format!("invalid encoder config {self:?}")));
        }
        Ok(())
    }
}

/// Working f64 copy of every trainable array. Also used as the gradient
/// container, with the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    pub image: Mlp,
    pub text: Mlp,
    /// Log of the contrastive temperature multiplier.
    pub logit_scale: f64,
    /// Linear classifier, `(classes, embed_dim)`.
    pub head: Array2<f64>,
}

/// Initial value of `logit_scale`, i.e. a temperature of 0.07.
pub fn initial_logit_scale() -> f64 {
    (1.0f64 / 0.07).ln()
}

impl Net {
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = Mlp::init(cfg.image_inputs(), cfg.hidden, cfg.embed_dim, &mut rng);
        let text = Mlp::init(cfg.vocab_buckets, cfg.hidden, cfg.embed_dim, &mut rng);
        Ok(Self {
            image,
            text,
            logit_scale: initial_logit_scale(),
            head: Array2::zeros((cfg.n_classes, cfg.embed_dim)),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            image: self.image.zeros_like(),
            text: self.text.zeros_like(),
            logit_scale: 0.0,
            head: Array2::zeros(self.head.raw_dim()),
        }
    }

    pub fn config(&self) -> EncoderConfig {
        let side = ((self.image.input_dim() / 3) as f64).sqrt().round() as usize;
        EncoderConfig {
            image_side: side,
            hidden: self.image.w1.nrows(),
            embed_dim: self.image.output_dim(),
            vocab_buckets: self.text.input_dim(),
            n_classes: self.head.nrows(),
        }
    }

    pub fn from_params(set: &ParameterSet) -> Result<Self> {
        let image = Mlp::import(IMAGE_PREFIX, set)?;
        let text = Mlp::import(TEXT_PREFIX, set)?;
        let scale = lookup(set, LOGIT_SCALE)?;
        if scale.len() != 1 {
            return Err(Error::InvalidParams("`logit_scale` must hold one value".into()));
        }
        let head = matrix(set, HEAD_WEIGHT)?;
        if image.output_dim() != text.output_dim() || head.ncols() != image.output_dim() {
            return Err(Error::InvalidParams(format!(
                "embedding widths disagree: image {}, text {}, head {}",
                image.output_dim(),
                text.output_dim(),
                head.ncols()
            )));
        }
        let side = ((image.input_dim() / 3) as f64).sqrt().round() as usize;
        if 3 * side * side != image.input_dim() {
            return Err(Error::InvalidParams(format!(
                "image input width {} is not a square RGB raster",
                image.input_dim()
            )));
        }
        if set.len() != PARAM_COUNT {
            return Err(Error::InvalidParams(format!(
                "expected {PARAM_COUNT} parameter arrays, found {}",
                set.len()
            )));
        }
        Ok(Self {
            image,
            text,
            logit_scale: scale.data()[0] as f64,
            head,
        })
    }

    pub fn to_params(&self) -> ParameterSet {
        let set = self
            .image
            .export(IMAGE_PREFIX, ParameterSet::new())
            .and_then(|s| self.text.export(TEXT_PREFIX, s))
            .and_then(|s| s.with(LOGIT_SCALE, Tensor::scalar(self.logit_scale as f32)))
            .and_then(|s| s.with(HEAD_WEIGHT, matrix_tensor(&self.head)));
        match set {
            Ok(set) => set,
            Err(e) => panic!("training produced an invalid parameter set: {e}"),
        }
    }

    /// Every array as a flat mutable slice, tagged with its group, in a
    /// fixed order shared by parameters and gradients.
    pub fn slices_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out: Vec<(ParamGroup, &mut [f64])> = Vec::with_capacity(10);
        out.extend(self.image.slices_mut().into_iter().map(|s| (ParamGroup::Image, s)));
        out.extend(self.text.slices_mut().into_iter().map(|s| (ParamGroup::Text, s)));
        out.push((ParamGroup::LogitScale, std::slice::from_mut(&mut self.logit_scale)));
        out.push((ParamGroup::Head, self.head.as_slice_mut().expect("standard layout")));
        out
    }

    /// Squared distance to `other`, accumulated in f64.
    pub fn squared_distance(&self, other: &Net) -> f64 {
        let mut a = self.clone();
        let mut b = other.clone();
        a.slices_mut()
            .into_iter()
            .zip(b.slices_mut())
            .map(|((_, x), (_, y))| x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Image,
    Text,
    LogitScale,
    Head,
}

/// Hashed bag-of-tokens features: lowercase alphanumeric tokens, FNV-1a
/// bucketed, counts scaled by `1 / sqrt(token count)`.
pub fn text_features(texts: &[&str], buckets: usize) -> Array2<f64> {
    let mut out = Array2::zeros((texts.len(), buckets));
    for (row, text) in texts.iter().enumerate() {
        let tokens: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect();
        if tokens.is_empty() {
            continue;
        }
        let scale = 1.0 / (tokens.len() as f64).sqrt();
        for token in &tokens {
            out[[row, (fnv1a(token.as_bytes()) % buckets as u64) as usize]] += scale;
        }
    }
    out
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            image_side: 4,
            hidden: 5,
            embed_dim: 3,
            vocab_buckets: 16,
            n_classes: 2,
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = Net::init(&small_cfg(), 9).unwrap().to_params();
        let b = Net::init(&small_cfg(), 9).unwrap().to_params();
        let c = Net::init(&small_cfg(), 10).unwrap().to_params();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn params_round_trip_through_f32() {
        let net = Net::init(&small_cfg(), 1).unwrap();
        let params = net.to_params();
        assert_eq!(params.len(), 10);
        let back = Net::from_params(&params).unwrap();
        assert_eq!(back.to_params(), params);
        assert_eq!(back.config(), small_cfg());
    }

    #[test]
    fn featurizer_is_case_insensitive_and_stable() {
        let f = text_features(&["Stop sign", "stop SIGN", ""], 32);
        assert_eq!(f.row(0), f.row(1));
        assert!(f.row(2).iter().all(|&v| v == 0.0));
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
