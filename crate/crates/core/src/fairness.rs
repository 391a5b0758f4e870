//! Group-fairness gaps of a binary predictor.
//!
//! All rates are empirical frequencies over a [`PredictionBatch`]. A gap whose
//! conditioning cell is empty is an error rather than zero: an absent group
//! would otherwise look perfectly fair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the TPR and FPR gaps are combined into ΔEO.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EoConvention {
    /// `|ΔTPR| + |ΔFPR|`, in `[0, 2]`.
    #[default]
    Sum,
    /// `max(|ΔTPR|, |ΔFPR|)`, in `[0, 1]`.
    Max,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionBatch {
    predicted: Vec<u8>,
    truth: Vec<u8>,
    sensitive: Vec<u8>,
}

impl PredictionBatch {
    pub fn new(predicted: Vec<u8>, truth: Vec<u8>, sensitive: Vec<u8>) -> Result<Self> {
        if predicted.len() != truth.len() || truth.len() != sensitive.len() {
            return Err(Error::Contract(format!(
                "prediction batch lengths differ: predicted {}, labels {}, sensitive {}",
                predicted.len(),
                truth.len(),
                sensitive.len()
            )));
        }
        let binary = |v: &[u8]| v.iter().all(|&x| x <= 1);
        if !(binary(&predicted) && binary(&truth) && binary(&sensitive)) {
            return Err(Error::Contract("prediction batch entries must be 0 or 1".into()));
        }
        Ok(PredictionBatch {
            predicted,
            truth,
            sensitive,
        })
    }

    /// Thresholds probabilities (`p >= threshold` → 1) before building the batch.
    pub fn from_scores(scores: &[f64], threshold: f64, truth: Vec<u8>, sensitive: Vec<u8>) -> Result<Self> {
        let predicted = scores.iter().map(|&p| u8::from(p >= threshold)).collect();
        Self::new(predicted, truth, sensitive)
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }

    pub fn predicted(&self) -> &[u8] {
        &self.predicted
    }

    pub fn truth(&self) -> &[u8] {
        &self.truth
    }

    pub fn sensitive(&self) -> &[u8] {
        &self.sensitive
    }

    fn confusion(&self) -> Confusion {
        let mut c = Confusion::default();
        for ((&p, &y), &s) in self.predicted.iter().zip(&self.truth).zip(&self.sensitive) {
            c.cells[s as usize][y as usize][p as usize] += 1;
        }
        c
    }
}

/// `cells[s][y][ŷ]` counts.
#[derive(Debug, Default, Clone, Copy)]
struct Confusion {
    cells: [[[u64; 2]; 2]; 2],
}

impl Confusion {
    fn group(&self, s: usize) -> u64 {
        self.cells[s].iter().flatten().sum()
    }

    fn positive_rate(&self, s: usize) -> Result<f64> {
        let n = self.group(s);
        if n == 0 {
            return Err(Error::UndefinedMetric(format!("group S={s} is empty")));
        }
        let pos = self.cells[s][0][1] + self.cells[s][1][1];
        Ok(pos as f64 / n as f64)
    }

    /// `P(Ŷ=1 | S=s, Y=y)`.
    fn rate_given(&self, s: usize, y: usize) -> Result<f64> {
        let [neg, pos] = self.cells[s][y];
        if neg + pos == 0 {
            return Err(Error::UndefinedMetric(format!("cell S={s}, Y={y} is empty")));
        }
        Ok(pos as f64 / (neg + pos) as f64)
    }

    fn accuracy(&self) -> Result<f64> {
        let total: u64 = (0..2).map(|s| self.group(s)).sum();
        if total == 0 {
            return Err(Error::UndefinedMetric("empty batch".into()));
        }
        let correct: u64 = (0..2).map(|s| self.cells[s][0][0] + self.cells[s][1][1]).sum();
        Ok(correct as f64 / total as f64)
    }

    fn delta_dp(&self) -> Result<f64> {
        Ok((self.positive_rate(0)? - self.positive_rate(1)?).abs())
    }

    fn delta_eopp(&self) -> Result<f64> {
        Ok((self.rate_given(0, 1)? - self.rate_given(1, 1)?).abs())
    }

    fn delta_eo(&self, convention: EoConvention) -> Result<f64> {
        let tpr = self.delta_eopp()?;
        let fpr = (self.rate_given(0, 0)? - self.rate_given(1, 0)?).abs();
        Ok(match convention {
            EoConvention::Sum => tpr + fpr,
            EoConvention::Max => tpr.max(fpr),
        })
    }
}

/// `|P(Ŷ=1 | S=0) − P(Ŷ=1 | S=1)|`.
pub fn delta_dp(batch: &PredictionBatch) -> Result<f64> {
    batch.confusion().delta_dp()
}

/// `|TPR₀ − TPR₁| + |FPR₀ − FPR₁|` under the default convention.
pub fn delta_eo(batch: &PredictionBatch) -> Result<f64> {
    delta_eo_with(batch, EoConvention::Sum)
}

pub fn delta_eo_with(batch: &PredictionBatch, convention: EoConvention) -> Result<f64> {
    batch.confusion().delta_eo(convention)
}

/// `|TPR₀ − TPR₁|`.
pub fn delta_eopp(batch: &PredictionBatch) -> Result<f64> {
    batch.confusion().delta_eopp()
}

pub fn accuracy(batch: &PredictionBatch) -> Result<f64> {
    batch.confusion().accuracy()
}

/// Accuracy, the three gaps and the per-group rates they are built from.
/// Fields that are undefined for the batch are `None` (`null` in JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub accuracy: Option<f64>,
    pub delta_dp: Option<f64>,
    pub delta_eo: Option<f64>,
    pub delta_eopp: Option<f64>,
    pub tpr_s0: Option<f64>,
    pub tpr_s1: Option<f64>,
    pub fpr_s0: Option<f64>,
    pub fpr_s1: Option<f64>,
    pub pos_rate_s0: Option<f64>,
    pub pos_rate_s1: Option<f64>,
    pub n_s0: u64,
    pub n_s1: u64,
}

impl FairnessReport {
    /// Fails with the first undefined field, for callers that need every metric.
    pub fn require_complete(&self) -> Result<&Self> {
        let fields = [
            ("accuracy", self.accuracy),
            ("delta_dp", self.delta_dp),
            ("delta_eo", self.delta_eo),
            ("delta_eopp", self.delta_eopp),
        ];
        for (name, v) in fields {
            if v.is_none() {
                return Err(Error::UndefinedMetric(format!("{name} undefined for this batch")));
            }
        }
        Ok(self)
    }
}

pub fn evaluate(batch: &PredictionBatch) -> FairnessReport {
    evaluate_with(batch, EoConvention::Sum)
}

/// One confusion-matrix pass; every gap is derived from the reported rates.
pub fn evaluate_with(batch: &PredictionBatch, convention: EoConvention) -> FairnessReport {
    let c = batch.confusion();
    FairnessReport {
        accuracy: c.accuracy().ok(),
        delta_dp: c.delta_dp().ok(),
        delta_eo: c.delta_eo(convention).ok(),
        delta_eopp: c.delta_eopp().ok(),
        tpr_s0: c.rate_given(0, 1).ok(),
        tpr_s1: c.rate_given(1, 1).ok(),
        fpr_s0: c.rate_given(0, 0).ok(),
        fpr_s1: c.rate_given(1, 0).ok(),
        pos_rate_s0: c.positive_rate(0).ok(),
        pos_rate_s1: c.positive_rate(1).ok(),
        n_s0: c.group(0),
        n_s1: c.group(1),
    }
}
