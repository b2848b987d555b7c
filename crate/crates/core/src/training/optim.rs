//! Parameter updates. Optimizer state lives outside the parameter set and
//! is never interpolated.

use serde::{Deserialize, Serialize};

use crate::model::nn::{Net, ParamGroup};

/// Upper bound on the log temperature multiplier (a multiplier of 100).
pub const MAX_LOGIT_SCALE: f64 = 4.605_170_185_988_092;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(crate::Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    weight_decay: f64,
    warmup_steps: usize,
    trainable: Vec<ParamGroup>,
    step: usize,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(
        kind: OptimizerKind,
        learning_rate: f64,
        weight_decay: f64,
        warmup_steps: usize,
        trainable: &[ParamGroup],
    ) -> Self {
        Self {
            kind,
            learning_rate,
            weight_decay,
            warmup_steps,
            trainable: trainable.to_vec(),
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    fn current_rate(&self) -> f64 {
        if self.warmup_steps == 0 {
            self.learning_rate
        } else {
            self.learning_rate * ((self.step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        }
    }

    /// One update of the trainable groups of `net` using `grads`, which must
    /// share its layout.
    pub fn step(&mut self, net: &mut Net, grads: &mut Net) {
        let lr = self.current_rate();
        let params = net.slices_mut();
        let grads = grads.slices_mut();
        if self.moments.is_empty() {
            self.moments = params.iter().map(|(_, p)| (vec![0.0; p.len()], vec![0.0; p.len()])).collect();
        }
        let t = (self.step + 1) as i32;
        for (((group, p), (_, g)), (m, v)) in params.into_iter().zip(grads).zip(self.moments.iter_mut()) {
            if !self.trainable.contains(&group) {
                continue;
            }
            let decay = if group == ParamGroup::LogitScale { 0.0 } else { self.weight_decay };
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in p.iter_mut().zip(g.iter()) {
                        *p -= lr * (g + decay * *p);
                    }
                }
                OptimizerKind::Adam => {
                    let c1 = 1.0 - ADAM_BETA1.powi(t);
                    let c2 = 1.0 - ADAM_BETA2.powi(t);
                    for (((p, g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let update = (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                        *p -= lr * (update + decay * *p);
                    }
                }
            }
        }
        net.logit_scale = net.logit_scale.clamp(0.0, MAX_LOGIT_SCALE);
        self.step += 1;
    }
}
