//! Declarative architecture of a stack.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Activation;
use crate::error::{Error, Result};

/// Group-fairness notion the level adversaries enforce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Statistical parity: the adversary sees `z` only.
    Dp,
    /// Equalized odds: the adversary sees `[z | y]`.
    Eo,
    /// Equal opportunity: the adversary only sees rows of one label class.
    Eopp,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Dp, Criterion::Eo, Criterion::Eopp];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Dp => "dp",
            Criterion::Eo => "eo",
            Criterion::Eopp => "eopp",
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(Criterion::Dp),
            "eo" => Ok(Criterion::Eo),
            "eopp" => Ok(Criterion::Eopp),
            other => Err(Error::config(
                "criterion",
                format!("unknown criterion {other:?}; allowed values: dp, eo, eopp"),
            )),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which reconstruction penalty a level uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconstructionLoss {
    /// Mean over rows of the squared L2 error.
    #[default]
    Mse,
    /// Square root of the above.
    Rmse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        LossWeights { alpha, beta, gamma }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(
                    format!("loss.{name}"),
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights::new(0.0, 1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub input_dim: usize,
    /// Hidden widths of the encoder between input and latent code.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Activation on the latent code itself.
    pub latent_activation: Activation,
    pub adversary_hidden: usize,
    pub classifier_hidden: usize,
    pub criterion: Criterion,
}

impl LevelSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, latent_dim: usize, criterion: Criterion) -> Self {
        LevelSpec {
            input_dim,
            hidden,
            latent_dim,
            latent_activation: Activation::Identity,
            adversary_hidden: HEAD_HIDDEN,
            classifier_hidden: HEAD_HIDDEN,
            criterion,
        }
    }

    pub fn encoder_dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden);
        d.push(self.latent_dim);
        d
    }

    pub fn decoder_dims(&self) -> Vec<usize> {
        let mut d = self.encoder_dims();
        d.reverse();
        d
    }

    /// Width of the adversary input: the latent code, plus the label for EO.
    pub fn adversary_input_dim(&self) -> usize {
        self.latent_dim + usize::from(self.criterion == Criterion::Eo)
    }
}

/// Width of the single hidden layer of classifier and adversary heads.
pub const HEAD_HIDDEN: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackSpec {
    pub levels: Vec<LevelSpec>,
    pub weights: LossWeights,
    #[serde(default)]
    pub reconstruction: ReconstructionLoss,
}

impl StackSpec {
    /// One level per entry of `latents`, each fed by the previous latent code.
    /// Intermediate codes pass through a leaky ReLU so the composed encoder has
    /// the same shape as a single MLP with those hidden widths.
    pub fn stacked(input_dim: usize, latents: &[usize], criterion: Criterion, weights: LossWeights) -> Self {
        let mut levels = Vec::with_capacity(latents.len());
        let mut prev = input_dim;
        for (i, &latent) in latents.iter().enumerate() {
            let mut l = LevelSpec::new(prev, vec![], latent, criterion);
            if i + 1 < latents.len() {
                l.latent_activation = Activation::LeakyRelu;
            }
            levels.push(l);
            prev = latent;
        }
        StackSpec {
            levels,
            weights,
            reconstruction: ReconstructionLoss::Mse,
        }
    }

    /// A single level whose encoder is `input → hidden… → latent`, with one
    /// adversary on the final code only.
    pub fn single_level(
        input_dim: usize,
        hidden: &[usize],
        latent: usize,
        criterion: Criterion,
        weights: LossWeights,
    ) -> Self {
        StackSpec {
            levels: vec![LevelSpec::new(input_dim, hidden.to_vec(), latent, criterion)],
            weights,
            reconstruction: ReconstructionLoss::Mse,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.levels.last().map_or(0, |l| l.latent_dim)
    }

    pub fn input_dim(&self) -> usize {
        self.levels.first().map_or(0, |l| l.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::config("stack.levels", "at least one level is required"));
        }
        self.weights.validate()?;
        for (i, l) in self.levels.iter().enumerate() {
            let field = format!("stack.levels[{i}]");
            if l.input_dim == 0 || l.latent_dim == 0 || l.hidden.contains(&0) {
                return Err(Error::config(field, "all widths must be >= 1"));
            }
            if l.adversary_hidden == 0 || l.classifier_hidden == 0 {
                return Err(Error::config(field, "head widths must be >= 1"));
            }
            if i > 0 {
                let prev = &self.levels[i - 1];
                if l.input_dim != prev.latent_dim {
                    return Err(Error::config(
                        field,
                        format!(
                            "level {i} input width {} does not match level {} latent width {}",
                            l.input_dim,
                            i - 1,
                            prev.latent_dim
                        ),
                    ));
                }
                if l.latent_dim >= prev.latent_dim {
                    return Err(Error::config(
                        field,
                        format!(
                            "latent widths must strictly decrease: level {} has {}, level {i} has {}",
                            i - 1,
                            prev.latent_dim,
                            l.latent_dim
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the JSON form; identifies the architecture in provenance records.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }
}
