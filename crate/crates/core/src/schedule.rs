//! Adaptive ensembling factor: a quarter-period cosine decay scaled by the
//! relative train/zero-shot loss, and the per-epoch trace of its values.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveFactorConfig {
    /// Scaling factor; larger values give smaller, smoother factors.
    pub gamma: f64,
    pub total_epochs: u32,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
}

impl Default for AdaptiveFactorConfig {
    fn default() -> Self {
        Self {
            gamma: 5.0,
            total_epochs: 10,
            clamp_lo: 0.0,
            clamp_hi: 1.0,
        }
    }
}

impl AdaptiveFactorConfig {
    pub fn new(gamma: f64, total_epochs: u32) -> Result<Self> {
        let cfg = Self {
            gamma,
            total_epochs,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Same config with the clamp interval replaced.
    pub fn with_clamp(mut self, lo: f64, hi: f64) -> Result<Self> {
        self.clamp_lo = lo;
        self.clamp_hi = hi;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Range(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.total_epochs < 1 {
            return Err(Error::Range("total_epochs must be at least 1".into()));
        }
        if !(0.0 <= self.clamp_lo && self.clamp_lo <= self.clamp_hi && self.clamp_hi <= 1.0) {
            return Err(Error::Range(format!(
                "clamp interval [{}, {}] must satisfy 0 <= lo <= hi <= 1",
                self.clamp_lo, self.clamp_hi
            )));
        }
        Ok(())
    }

    pub fn factor(&self, epoch: u32, train_loss: f64, zero_shot_loss: f64) -> Result<AdaptiveFactor> {
        adaptive_factor(epoch, self, train_loss, zero_shot_loss)
    }
}

/// `(1 + cos(pi * t / (2T))) / 2`, decreasing from 1 at `t = 0` to 0.5 at `t = T`.
pub fn cosine_term(epoch: u32, total_epochs: u32) -> Result<f64> {
    if total_epochs < 1 {
        return Err(Error::Range("total_epochs must be at least 1".into()));
    }
    if epoch > total_epochs {
        return Err(Error::Range(format!(
            "epoch {epoch} outside [0, {total_epochs}]"
        )));
    }
    let phase = FRAC_PI_2 * (epoch as f64 / total_epochs as f64);
    Ok((1.0 + phase.cos()) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveFactor {
    /// Unclamped value; may exceed 1 for small gamma or large train loss.
    pub beta_raw: f64,
    pub beta: f64,
}

pub fn adaptive_factor(
    epoch: u32,
    cfg: &AdaptiveFactorConfig,
    train_loss: f64,
    zero_shot_loss: f64,
) -> Result<AdaptiveFactor> {
    cfg.validate()?;
    if !train_loss.is_finite() || !zero_shot_loss.is_finite() {
        return Err(Error::Validity(format!(
            "losses must be finite (train {train_loss}, zero-shot {zero_shot_loss})"
        )));
    }
    if zero_shot_loss <= 0.0 {
        return Err(Error::DivisionGuard(zero_shot_loss));
    }
    if train_loss < 0.0 {
        return Err(Error::Range(format!("train loss must be nonnegative, got {train_loss}")));
    }
    let cosine = cosine_term(epoch, cfg.total_epochs)?;
    let ratio = (train_loss + zero_shot_loss) / zero_shot_loss;
    let beta_raw = cosine / cfg.gamma * ratio;
    let beta = beta_raw.clamp(cfg.clamp_lo, cfg.clamp_hi);
    if beta != beta_raw {
        log::warn!("epoch {epoch}: adaptive factor {beta_raw:.6} clamped to {beta:.6}");
    }
    Ok(AdaptiveFactor { beta_raw, beta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: u32,
    #[serde(rename = "L_train")]
    pub train_loss: f64,
    #[serde(rename = "L_zero_shot")]
    pub zero_shot_loss: f64,
    pub beta_raw: f64,
    pub beta: f64,
}

/// Append-only record of the factor trajectory, one row per epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FactorTrace {
    rows: Vec<TraceRow>,
}

impl FactorTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: TraceRow) -> Result<()> {
        let expected = self.rows.len() as u32;
        if row.epoch != expected {
            return Err(Error::Range(format!(
                "trace expects epoch {expected}, got {}",
                row.epoch
            )));
        }
        if !(row.zero_shot_loss > 0.0) {
            return Err(Error::DivisionGuard(row.zero_shot_loss));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.beta).collect()
    }

    /// CSV with header `epoch,L_train,L_zero_shot,beta_raw,beta`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record(["epoch", "L_train", "L_zero_shot", "beta_raw", "beta"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut trace = Self::new();
        for row in csv::Reader::from_path(path)?.deserialize() {
            trace.push(row?)?;
        }
        Ok(trace)
    }
}
