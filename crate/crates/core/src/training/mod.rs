//! Fine-tuning strategies for the reference encoders.
//!
//! Every strategy starts from the zero-shot anchor: the input encoders with
//! their linear head set to the scaled class-text embeddings of the prompt
//! set. Training runs on an f64 working copy that is rounded to the f32
//! parameter set at the end of every epoch, so strategies that share a seed
//! share their trajectory bit for bit until they diverge by construction.

mod losses;
mod optim;

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Samples;
use crate::error::{Error, Result};
use crate::model::nn::{text_features, Net, ParamGroup};
use crate::model::{Classifier, EncoderPair, Readout, ReferenceEncoders};
use crate::prompts::PromptSet;
use crate::schedule::{AdaptiveFactorConfig, FactorTrace, TraceRow};
use crate::weights::{interpolate, save_checkpoint, squared_distance, Checkpoint, CheckpointMeta, ParameterSet};

pub use losses::{
    contrastive_forward_backward, contrastive_loss, fft_forward_backward, fft_loss, lp_forward_backward, lp_loss,
    AnchoredGrad, ContrastiveGrad, LinearGrad,
};
pub use optim::{Optimizer, OptimizerKind, MAX_LOGIT_SCALE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ZeroShot,
    LinearProbe,
    FullFt,
    WiseFt,
    Adwe,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::ZeroShot,
        Strategy::LinearProbe,
        Strategy::FullFt,
        Strategy::WiseFt,
        Strategy::Adwe,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "zero_shot",
            Strategy::LinearProbe => "linear_probe",
            Strategy::FullFt => "full_ft",
            Strategy::WiseFt => "wise_ft",
            Strategy::Adwe => "adwe",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Contrastive,
    CrossEntropy,
}

impl LossMode {
    pub fn tag(self) -> &'static str {
        match self {
            LossMode::Contrastive => "contrastive",
            LossMode::CrossEntropy => "cross_entropy",
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrastive" => Ok(LossMode::Contrastive),
            "cross_entropy" => Ok(LossMode::CrossEntropy),
            other => Err(Error::Config(format!("unknown loss mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the squared-distance penalty toward the anchor.
    pub lambda: f64,
    /// Post-hoc interpolation factor; 1 keeps the anchor, 0 the fine-tuned weights.
    pub alpha: f64,
    pub factor: AdaptiveFactorConfig,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub warmup_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Adwe,
            epochs: 10,
            batch_size: 512,
            learning_rate: 3e-5,
            lambda: 0.0,
            alpha: 0.5,
            factor: AdaptiveFactorConfig::default(),
            seed: 0,
            loss_mode: LossMode::Contrastive,
            optimizer: OptimizerKind::Sgd,
            weight_decay: 0.0,
            warmup_steps: 0,
        }
    }
}

impl TrainConfig {
    /// Settings sized for the synthetic regional-shift data: small batches
    /// and a learning rate large enough to move tiny encoders in ten epochs.
    pub fn desk_scale() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            ..Self::default()
        }
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay must be nonnegative, got {}", self.weight_decay)));
        }
        let min_batch = if self.uses_contrastive() { 2 } else { 1 };
        if self.batch_size < min_batch {
            return Err(Error::Config(format!("batch size must be at least {min_batch}, got {}", self.batch_size)));
        }
        self.factor.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.strategy == Strategy::Adwe && self.factor.total_epochs != self.epochs {
            return Err(Error::Config(format!(
                "schedule horizon {} differs from the {} training epochs",
                self.factor.total_epochs, self.epochs
            )));
        }
        Ok(())
    }

    fn uses_contrastive(&self) -> bool {
        self.loss_mode == LossMode::Contrastive && self.strategy != Strategy::LinearProbe
    }

    fn expect(&self, strategy: Strategy) -> Result<()> {
        if self.strategy != strategy {
            return Err(Error::Config(format!(
                "config selects `{}` but `{strategy}` was invoked",
                self.strategy
            )));
        }
        self.validate()
    }
}

/// Training split, validation split for the anchor loss, and prompts.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a Samples,
    pub val: &'a Samples,
    pub prompts: &'a PromptSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochResult {
    pub epoch: u32,
    pub train_loss: f64,
    pub zero_shot_loss: Option<f64>,
    pub beta: Option<f64>,
    /// Squared distance to the anchor before ensembling, when ensembling ran.
    pub pre_ensemble_anchor_distance: Option<f64>,
    pub anchor_distance: f64,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub anchor_digest: String,
    pub epochs: Vec<EpochResult>,
    pub trace: Option<FactorTrace>,
}

impl TrainOutcome {
    /// Writes `checkpoint/`, `epochs.jsonl` and, for scheduled runs, `trace.csv`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        save_checkpoint(&self.checkpoint, dir.join("checkpoint"))?;
        let mut out = fs::File::create(dir.join("epochs.jsonl"))?;
        for e in &self.epochs {
            writeln!(out, "{}", serde_json::to_string(e)?)?;
        }
        if let Some(trace) = &self.trace {
            trace.save_csv(dir.join("trace.csv"))?;
        }
        Ok(())
    }
}

/// Anchor parameters: the encoders with a zero-shot linear head.
pub fn zero_shot_anchor(encoders: &ReferenceEncoders, prompts: &PromptSet) -> Result<ParameterSet> {
    Ok(encoders.clone().with_zero_shot_head(prompts)?.export_params())
}

/// Linear-head readout for cross-entropy and probe checkpoints, prompt
/// similarity otherwise.
pub fn readout_for(meta: &CheckpointMeta) -> Readout {
    if meta.strategy == Strategy::LinearProbe.tag() || meta.loss_mode.as_deref() == Some(LossMode::CrossEntropy.tag()) {
        Readout::Linear
    } else {
        Readout::Prompts
    }
}

pub fn classifier_for(ckpt: &Checkpoint, prompts: &PromptSet) -> Result<Classifier<ReferenceEncoders>> {
    let encoders = ReferenceEncoders::from_params(&ckpt.params)?;
    match readout_for(&ckpt.meta) {
        Readout::Linear => Classifier::from_head(encoders),
        Readout::Prompts => {
            let n = encoders.config().n_classes;
            Classifier::from_prompts(encoders, prompts, n)
        }
    }
}

/// Contrastive loss of a batch and its gradient with respect to every
/// parameter of `net`.
pub fn contrastive_gradients(net: &Net, pixels: ArrayView2<f64>, captions: ArrayView2<f64>) -> Result<(f64, Net)> {
    if pixels.nrows() < 2 {
        return Err(Error::BatchSize {
            min: 2,
            got: pixels.nrows(),
        });
    }
    let img = net.image.forward(pixels)?;
    let txt = net.text.forward(captions)?;
    let scale = net.logit_scale.exp();
    let g = contrastive_forward_backward(img.unit.view(), txt.unit.view(), scale);
    let mut grads = net.zeros_like();
    net.image.backward(pixels, &img, g.d_images.view(), &mut grads.image);
    net.text.backward(captions, &txt, g.d_texts.view(), &mut grads.text);
    grads.logit_scale = g.d_scale * scale;
    Ok((g.loss, grads))
}

/// Cross-entropy of the linear head on normalized image embeddings. The
/// image encoder gradient is only computed when `through_encoder` is set.
pub fn cross_entropy_gradients(
    net: &Net,
    pixels: ArrayView2<f64>,
    labels: &[usize],
    through_encoder: bool,
) -> Result<(f64, Net)> {
    if let Some(&bad) = labels.iter().find(|&&y| y >= net.head.nrows()) {
        return Err(Error::Label {
            label: bad,
            classes: net.head.nrows(),
        });
    }
    let img = net.image.forward(pixels)?;
    let g = lp_forward_backward(img.unit.view(), labels, net.head.view());
    let mut grads = net.zeros_like();
    grads.head = g.d_weights;
    if through_encoder {
        net.image.backward(pixels, &img, g.d_features.view(), &mut grads.image);
    }
    Ok((g.loss, grads))
}

fn epoch_rng(seed: u64, epoch: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(epoch) + 1);
    rng
}

fn flat(net: &Net) -> Vec<Vec<f64>> {
    net.clone().slices_mut().into_iter().map(|(_, s)| s.to_vec()).collect()
}

struct Session<'a> {
    cfg: &'a TrainConfig,
    data: TrainData<'a>,
    mode: LossMode,
    groups: Vec<ParamGroup>,
    anchor: Net,
    anchor_flat: Vec<Vec<f64>>,
    penalty: f64,
    captions: Array2<f64>,
}

impl<'a> Session<'a> {
    fn new(anchor: &ParameterSet, data: TrainData<'a>, cfg: &'a TrainConfig) -> Result<Self> {
        if data.train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let anchor = Net::from_params(anchor)?;
        data.prompts.check_covers(anchor.head.nrows())?;
        let (mode, groups, penalty) = match cfg.strategy {
            Strategy::LinearProbe => (LossMode::CrossEntropy, vec![ParamGroup::Head], 0.0),
            _ => match cfg.loss_mode {
                LossMode::Contrastive => (
                    LossMode::Contrastive,
                    vec![ParamGroup::Image, ParamGroup::Text, ParamGroup::LogitScale],
                    cfg.lambda,
                ),
                LossMode::CrossEntropy => (LossMode::CrossEntropy, vec![ParamGroup::Image, ParamGroup::Head], cfg.lambda),
            },
        };
        let texts: Vec<&str> = data.prompts.templates().iter().map(|t| t.text.as_str()).collect();
        let captions = text_features(&texts, anchor.text.input_dim());
        Ok(Self {
            cfg,
            data,
            mode,
            groups,
            anchor_flat: flat(&anchor),
            anchor,
            penalty,
            captions,
        })
    }

    fn caption_row(&self, class_id: usize, k: usize) -> usize {
        class_id * self.data.prompts.n_per_class() + k
    }

    fn batch_gradients(&self, net: &Net, samples: &Samples, idx: &[usize], rng: &mut ChaCha8Rng) -> Result<(f64, Net)> {
        let pixels = samples.pixels.select(Axis(0), idx);
        let labels: Vec<usize> = idx.iter().map(|&i| samples.labels[i]).collect();
        match self.mode {
            LossMode::Contrastive => {
                let n = self.data.prompts.n_per_class();
                let rows: Vec<usize> = labels
                    .iter()
                    .map(|&c| self.caption_row(c, rng.random_range(0..n)))
                    .collect();
                let captions = self.captions.select(Axis(0), &rows);
                contrastive_gradients(net, pixels.view(), captions.view())
            }
            LossMode::CrossEntropy => {
                let through = self.groups.contains(&ParamGroup::Image);
                cross_entropy_gradients(net, pixels.view(), &labels, through)
            }
        }
    }

    fn add_penalty(&self, net: &mut Net, grads: &mut Net) {
        if self.penalty == 0.0 {
            return;
        }
        for (((group, p), (_, g)), a) in net.slices_mut().into_iter().zip(grads.slices_mut()).zip(&self.anchor_flat) {
            if self.groups.contains(&group) {
                for ((g, p), a) in g.iter_mut().zip(p.iter()).zip(a) {
                    *g += 2.0 * self.penalty * (p - a);
                }
            }
        }
    }

    /// One pass over the shuffled training split; returns the
    /// sample-weighted mean data loss (penalty excluded).
    fn run_epoch(&self, net: &mut Net, opt: &mut Optimizer, epoch: u32) -> Result<f64> {
        let mut rng = epoch_rng(self.cfg.seed, epoch);
        let mut order: Vec<usize> = (0..self.data.train.len()).collect();
        order.shuffle(&mut rng);
        let min_batch = if self.mode == LossMode::Contrastive { 2 } else { 1 };
        let (mut total, mut count) = (0.0, 0usize);
        for idx in order.chunks(self.cfg.batch_size) {
            if idx.len() < min_batch {
                continue;
            }
            let (loss, mut grads) = self.batch_gradients(net, self.data.train, idx, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Validity(format!("training loss became {loss} in epoch {epoch}")));
            }
            self.add_penalty(net, &mut grads);
            opt.step(net, &mut grads);
            total += loss * idx.len() as f64;
            count += idx.len();
        }
        if count == 0 {
            return Err(Error::Data("training split is too small to form a batch".into()));
        }
        Ok(total / count as f64)
    }

    /// Loss of the frozen anchor on the validation split. Contrastive
    /// captions are chosen deterministically, template `i mod n` for sample `i`.
    fn anchor_loss(&self) -> Result<f64> {
        let val = self.data.val;
        if val.is_empty() {
            return Err(Error::Data("validation split is empty".into()));
        }
        let n = self.data.prompts.n_per_class();
        let min_batch = if self.mode == LossMode::Contrastive { 2 } else { 1 };
        let order: Vec<usize> = (0..val.len()).collect();
        let (mut total, mut count) = (0.0, 0usize);
        for idx in order.chunks(self.cfg.batch_size) {
            if idx.len() < min_batch {
                continue;
            }
            let pixels = val.pixels.select(Axis(0), idx);
            let img = self.anchor.image.forward(pixels.view())?;
            let loss = match self.mode {
                LossMode::Contrastive => {
                    let rows: Vec<usize> = idx.iter().map(|&i| self.caption_row(val.labels[i], i % n)).collect();
                    let txt = self.anchor.text.forward(self.captions.select(Axis(0), &rows).view())?;
                    contrastive_forward_backward(img.unit.view(), txt.unit.view(), self.anchor.logit_scale.exp()).loss
                }
                LossMode::CrossEntropy => {
                    let labels: Vec<usize> = idx.iter().map(|&i| val.labels[i]).collect();
                    lp_loss(img.unit.view(), &labels, self.anchor.head.view())?
                }
            };
            total += loss * idx.len() as f64;
            count += idx.len();
        }
        if count == 0 {
            return Err(Error::Data("validation split is too small to form a batch".into()));
        }
        Ok(total / count as f64)
    }
}

type Observer<'o> = dyn FnMut(&EpochResult, &ParameterSet) -> Result<()> + 'o;

fn fit(
    anchor: &ParameterSet,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    observer: &mut Observer<'_>,
) -> Result<(ParameterSet, Vec<EpochResult>, Option<FactorTrace>)> {
    let session = Session::new(anchor, data, cfg)?;
    let scheduled = cfg.strategy == Strategy::Adwe;
    let zero_shot_loss = if scheduled || !data.val.is_empty() {
        Some(session.anchor_loss()?)
    } else {
        None
    };
    let mut opt = Optimizer::new(
        cfg.optimizer,
        cfg.learning_rate,
        cfg.weight_decay,
        cfg.warmup_steps,
        &session.groups,
    );
    let mut params = anchor.clone();
    let mut net = Net::from_params(&params)?;
    let mut epochs = Vec::with_capacity(cfg.epochs as usize);
    let mut trace = scheduled.then(FactorTrace::new);
    for epoch in 0..cfg.epochs {
        let train_loss = session.run_epoch(&mut net, &mut opt, epoch)?;
        params = net.to_params();
        let (mut beta, mut pre_distance) = (None, None);
        if let Some(trace) = trace.as_mut() {
            let zs = zero_shot_loss.expect("scheduled runs compute the anchor loss");
            let factor = cfg.factor.factor(epoch, train_loss, zs)?;
            pre_distance = Some(squared_distance(&params, anchor)?);
            params = interpolate(anchor, &params, factor.beta)?;
            net = Net::from_params(&params)?;
            trace.push(TraceRow {
                epoch,
                train_loss,
                zero_shot_loss: zs,
                beta_raw: factor.beta_raw,
                beta: factor.beta,
            })?;
            beta = Some(factor.beta);
        } else {
            net = Net::from_params(&params)?;
        }
        let result = EpochResult {
            epoch,
            train_loss,
            zero_shot_loss,
            beta,
            pre_ensemble_anchor_distance: pre_distance,
            anchor_distance: squared_distance(&params, anchor)?,
            digest: params.digest(),
        };
        log::info!(
            "{} epoch {epoch}: train loss {train_loss:.5}{}",
            cfg.strategy,
            beta.map(|b| format!(", beta {b:.5}")).unwrap_or_default()
        );
        observer(&result, &params)?;
        epochs.push(result);
    }
    Ok((params, epochs, trace))
}

fn meta_for(cfg: &TrainConfig, data: &TrainData<'_>, epochs: &[EpochResult]) -> CheckpointMeta {
    let mut meta = CheckpointMeta::new(cfg.strategy.tag(), cfg.seed);
    meta.epoch = epochs.len() as u32;
    meta.train_losses = epochs.iter().map(|e| e.train_loss).collect();
    meta.zero_shot_losses = epochs.iter().filter_map(|e| e.zero_shot_loss).collect();
    meta.beta_history = epochs.iter().filter_map(|e| e.beta).collect();
    meta.prompt_digest = Some(data.prompts.digest());
    meta.loss_mode = Some(
        if cfg.strategy == Strategy::LinearProbe {
            LossMode::CrossEntropy
        } else {
            cfg.loss_mode
        }
        .tag()
        .to_owned(),
    );
    if cfg.strategy == Strategy::Adwe {
        meta.gamma = Some(cfg.factor.gamma);
    }
    meta
}

fn outcome(
    anchor: &ParameterSet,
    params: ParameterSet,
    meta: CheckpointMeta,
    epochs: Vec<EpochResult>,
    trace: Option<FactorTrace>,
) -> Result<TrainOutcome> {
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(params, meta)?,
        anchor_digest: anchor.digest(),
        epochs,
        trace,
    })
}

/// The anchor itself, packaged as a checkpoint.
pub fn train_zero_shot(encoders: &ReferenceEncoders, prompts: &PromptSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.strategy != Strategy::ZeroShot {
        return Err(Error::Config(format!("config selects `{}` but `zero_shot` was invoked", cfg.strategy)));
    }
    let anchor = zero_shot_anchor(encoders, prompts)?;
    let mut meta = CheckpointMeta::new(Strategy::ZeroShot.tag(), cfg.seed);
    meta.prompt_digest = Some(prompts.digest());
    outcome(&anchor, anchor.clone(), meta, Vec::new(), None)
}

/// Trains only the linear head on frozen image features.
pub fn train_linear_probe(encoders: &ReferenceEncoders, data: TrainData<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.expect(Strategy::LinearProbe)?;
    run(encoders, data, cfg, &mut |_, _| Ok(()))
}

/// Gradient training with the configured loss mode and anchor penalty.
pub fn train_full(encoders: &ReferenceEncoders, data: TrainData<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.expect(Strategy::FullFt)?;
    run(encoders, data, cfg, &mut |_, _| Ok(()))
}

/// `alpha * zs + (1 - alpha) * ft`.
pub fn wise_ft_ensemble(zs: &ParameterSet, ft: &ParameterSet, alpha: f64) -> Result<ParameterSet> {
    interpolate(zs, ft, alpha)
}

/// Full fine-tuning followed by a single post-hoc interpolation.
pub fn train_wise_ft(encoders: &ReferenceEncoders, data: TrainData<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.expect(Strategy::WiseFt)?;
    run(encoders, data, cfg, &mut |_, _| Ok(()))
}

/// Fine-tuning with per-epoch interpolation toward the anchor.
pub fn train_adwe(encoders: &ReferenceEncoders, data: TrainData<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.expect(Strategy::Adwe)?;
    run(encoders, data, cfg, &mut |_, _| Ok(()))
}

/// Dispatches on `cfg.strategy`.
pub fn train(encoders: &ReferenceEncoders, data: TrainData<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(encoders, data, cfg, &mut |_, _| Ok(()))
}

/// Like [`train`], calling `observer` with each epoch's result and the
/// parameters at the end of that epoch.
pub fn train_observed(
    encoders: &ReferenceEncoders,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    observer: &mut Observer<'_>,
) -> Result<TrainOutcome> {
    if cfg.strategy == Strategy::ZeroShot {
        return train_zero_shot(encoders, data.prompts, cfg);
    }
    cfg.validate()?;
    run(encoders, data, cfg, observer)
}

fn run(
    encoders: &ReferenceEncoders,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    observer: &mut Observer<'_>,
) -> Result<TrainOutcome> {
    let anchor = zero_shot_anchor(encoders, data.prompts)?;
    let (params, epochs, trace) = fit(&anchor, data, cfg, observer)?;
    let mut meta = meta_for(cfg, &data, &epochs);
    let params = if cfg.strategy == Strategy::WiseFt {
        meta.alpha = Some(cfg.alpha);
        wise_ft_ensemble(&anchor, &params, cfg.alpha)?
    } else {
        params
    };
    outcome(&anchor, params, meta, epochs, trace)
}

/// Top-1 accuracy of `ckpt` on `samples`.
pub fn accuracy(ckpt: &Checkpoint, prompts: &PromptSet, samples: &Samples) -> Result<f64> {
    use crate::model::ImageClassifier;
    if samples.is_empty() {
        return Err(Error::Data("cannot score an empty split".into()));
    }
    let preds = classifier_for(ckpt, prompts)?.classify(samples.pixels.view())?;
    let hits = preds.iter().zip(&samples.labels).filter(|(p, &y)| p.class_id == y).count();
    Ok(hits as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_and_mode_tags_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.tag().parse::<Strategy>().unwrap(), s);
        }
        assert!("fancy".parse::<Strategy>().is_err());
        assert_eq!("cross_entropy".parse::<LossMode>().unwrap(), LossMode::CrossEntropy);
    }

    #[test]
    fn config_invariants() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        assert!(TrainConfig { epochs: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { alpha: 1.5, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { lambda: -1.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { batch_size: 1, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { epochs: 4, ..ok.clone() }.validate().is_err());
        TrainConfig {
            epochs: 4,
            strategy: Strategy::FullFt,
            ..ok
        }
        .validate()
        .unwrap();
    }

    #[test]
    fn readout_follows_loss_mode() {
        let mut meta = CheckpointMeta::new("full_ft", 0);
        assert_eq!(readout_for(&meta), Readout::Prompts);
        meta.loss_mode = Some("cross_entropy".into());
        assert_eq!(readout_for(&meta), Readout::Linear);
        assert_eq!(readout_for(&CheckpointMeta::new("linear_probe", 0)), Readout::Linear);
    }

    #[test]
    fn published_defaults() {
        let cfg = TrainConfig::default();
        assert_eq!((cfg.epochs, cfg.batch_size, cfg.learning_rate), (10, 512, 3e-5));
        assert_eq!(cfg.optimizer, OptimizerKind::Sgd);
        assert_eq!(cfg.factor.gamma, 5.0);
    }
}
