use std::fmt;

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::refine::{GrbConfig, GrbFlags};
use crate::seed::SeedConfig;

/// Switches that remove one component each. They are independent; any
/// combination is a valid model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Grounding transformer uses its self branch in place of cross-attention.
    pub no_prior_feature_grounding: bool,
    /// Grounded seed features are replaced by zeros.
    pub no_seed_grounding: bool,
    /// Prior features in refinement are replaced by observation features.
    pub no_dual_source: bool,
    /// CSSC attention is replaced by its query projection.
    pub no_structure_aware: bool,
    /// Prior branch removed; observation features stand in for it.
    pub inpaint_mode: bool,
}

impl Ablation {
    pub const NAMES: [&'static str; 5] = [
        "no_prior_feature_grounding",
        "no_seed_grounding",
        "no_dual_source",
        "no_structure_aware",
        "inpaint_mode",
    ];

    /// The four single-component ablations compared against the full model.
    pub const TABLE: [&'static str; 4] = [
        "no_prior_feature_grounding",
        "no_seed_grounding",
        "no_dual_source",
        "no_structure_aware",
    ];

    fn flag_mut(&mut self, name: &str) -> Result<&mut bool> {
        Ok(match name {
            "no_prior_feature_grounding" => &mut self.no_prior_feature_grounding,
            "no_seed_grounding" => &mut self.no_seed_grounding,
            "no_dual_source" => &mut self.no_dual_source,
            "no_structure_aware" => &mut self.no_structure_aware,
            "inpaint_mode" => &mut self.inpaint_mode,
            _ => {
                return Err(Error::invalid(format!(
                    "unknown ablation `{name}` (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }

    pub fn with(mut self, name: &str) -> Result<Self> {
        *self.flag_mut(name)? = true;
        Ok(self)
    }

    /// Parses a comma-separated list; empty entries are ignored.
    pub fn parse_list(list: &str) -> Result<Self> {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .try_fold(Self::default(), |a, name| a.with(name))
    }

    pub fn active(&self) -> Vec<&'static str> {
        let flags = [
            self.no_prior_feature_grounding,
            self.no_seed_grounding,
            self.no_dual_source,
            self.no_structure_aware,
            self.inpaint_mode,
        ];
        Self::NAMES
            .iter()
            .zip(flags)
            .filter(|(_, on)| *on)
            .map(|(n, _)| *n)
            .collect()
    }

    pub fn grb_flags(&self) -> GrbFlags {
        GrbFlags {
            dual_source: !self.no_dual_source,
            structure_aware: !self.no_structure_aware,
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let active = self.active();
        if active.is_empty() {
            f.write_str("full")
        } else {
            f.write_str(&active.join("+"))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub seed: SeedConfig,
    /// One entry per refinement block.
    pub grbs: Vec<GrbConfig>,
    #[serde(default)]
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            seed: SeedConfig::default(),
            grbs: vec![GrbConfig::default(); 2],
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.seed.validate()?;
        if self.grbs.is_empty() {
            return Err(Error::invalid("model needs at least one refinement block"));
        }
        let d = self.encoder.dim;
        if self.seed.dim != d {
            return Err(Error::invalid(format!("seed dim {} != encoder dim {d}", self.seed.dim)));
        }
        for (i, g) in self.grbs.iter().enumerate() {
            g.validate()?;
            if g.dim != d {
                return Err(Error::invalid(format!(
                    "refinement block {i} dim {} != encoder dim {d}",
                    g.dim
                )));
            }
            if g.k > self.encoder.n_e {
                return Err(Error::invalid(format!(
                    "refinement block {i} k {} exceeds encoder centers {}",
                    g.k, self.encoder.n_e
                )));
            }
            if g.k > self.points_before(i) {
                return Err(Error::invalid(format!(
                    "refinement block {i} k {} exceeds its context size {}",
                    g.k,
                    self.points_before(i)
                )));
            }
        }
        Ok(())
    }

    /// Points entering block `i`; block 0 receives the scaffold.
    pub fn points_before(&self, i: usize) -> usize {
        self.grbs[..i].iter().fold(self.seed.n_c, |n, g| n * g.r)
    }

    /// Cardinality of every level: scaffold first, then each block.
    pub fn level_sizes(&self) -> Vec<usize> {
        (0..=self.grbs.len()).map(|i| self.points_before(i)).collect()
    }

    pub fn output_points(&self) -> usize {
        self.points_before(self.grbs.len())
    }

    /// Smallest cloud either encoder accepts.
    pub fn min_input_points(&self) -> usize {
        self.encoder.n_e.max(self.encoder.k_local)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Validation cadence in iterations.
    pub val_every: usize,
    /// F-score distance threshold.
    pub tau: f64,
}

/// Base learning rate of the full-scale schedule (100k iterations, batch 192).
pub const PAPER_LR: f64 = 2e-4;

/// Base learning rate of the 2000-iteration toy schedule. The short run at
/// batch 8 needs a larger step than the full-scale rate to converge.
pub const TOY_LR: f64 = 4e-3;

/// The toy CPU schedule; see [`TrainConfig::paper`] for the full-scale one.
impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 8,
            lr: TOY_LR,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            val_every: 100,
            tau: 0.01,
        }
    }
}

impl TrainConfig {
    /// Full-scale schedule: 100k iterations at batch 192 from `PAPER_LR`.
    pub fn paper() -> Self {
        Self {
            iterations: 100_000,
            batch_size: 192,
            lr: PAPER_LR,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.val_every == 0 {
            return Err(Error::invalid("batch size and validation cadence must be positive"));
        }
        let pos = [self.lr, self.eps, self.tau];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("learning rate, eps and tau must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}
