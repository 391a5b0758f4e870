//! Independent predictors for judging a representation: a probe MLP on frozen
//! encodings, logistic regression and a random forest, plus k-fold
//! cross-validation around any of them.

mod cv;
mod forest;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, AdamConfig, AdamState, Graph, Matrix, Mlp};
use crate::data::{batches, labels_column, Dataset};
use crate::error::{Error, Result};
use crate::stack::TrainedStack;

pub use cv::{aggregate, cross_validate, ComparisonTable, CvResult, CvSummary, MeanStd, ModelKind, TableRow};
pub use forest::{train_forest, FeatureRule, ForestSpec, RandomForest, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec {
            hidden: 20,
            epochs: 100,
            lr: 0.01,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl ProbeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config("probe.hidden", "must be >= 1"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("probe", "epochs and batch size must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("probe.lr", "must be finite and > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegSpec {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for LogRegSpec {
    fn default() -> Self {
        LogRegSpec {
            epochs: 300,
            lr: 0.05,
            seed: 0,
        }
    }
}

/// A sigmoid-output network together with its per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedClassifier {
    pub model: Mlp,
    pub loss_history: Vec<f64>,
}

impl FittedClassifier {
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_width("classifier predict", x, self.model.in_dim())?;
        Ok(self.model.forward_value(x)?.into_vec())
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<u8>> {
        Ok(threshold(&self.predict_proba(x)?))
    }
}

/// Probe MLP on top of a frozen stack: predicts from raw features.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub stack: TrainedStack,
    pub head: FittedClassifier,
}

impl Probe {
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.head.predict_proba(&self.stack.encode_all(x)?)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<u8>> {
        Ok(threshold(&self.predict_proba(x)?))
    }
}

fn threshold(p: &[f64]) -> Vec<u8> {
    p.iter().map(|&v| u8::from(v >= 0.5)).collect()
}

fn check_width(op: &'static str, x: &Matrix, want: usize) -> Result<()> {
    if x.cols() != want {
        return Err(Error::Dimension {
            op,
            lhs: x.shape(),
            rhs: (want, 1),
        });
    }
    Ok(())
}

/// Mini-batch Adam on plain BCE. `batch_size = None` trains full-batch.
pub fn fit_classifier(
    x: &Matrix,
    y: &[u8],
    hidden: &[usize],
    epochs: usize,
    lr: f64,
    batch_size: Option<usize>,
    seed: u64,
) -> Result<FittedClassifier> {
    if x.rows() != y.len() {
        return Err(Error::Dimension {
            op: "fit_classifier",
            lhs: x.shape(),
            rhs: (y.len(), 1),
        });
    }
    if x.is_empty() {
        return Err(Error::Contract("cannot fit a classifier on zero rows".into()));
    }
    if !x.is_finite() {
        return Err(Error::Contract("classifier features must be finite".into()));
    }
    let mut dims = vec![x.cols()];
    dims.extend(hidden);
    dims.push(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Mlp::new(&dims, Activation::LeakyRelu, Activation::Sigmoid, &mut rng);
    let mut opt = AdamState::new(AdamConfig::with_lr(lr), &model.param_shapes());
    let mut loss_history = Vec::with_capacity(epochs);
    let full: Vec<Vec<usize>> = vec![(0..x.rows()).collect()];

    for epoch in 0..epochs {
        let order = match batch_size {
            Some(bs) => batches(x.rows(), bs, seed, epoch as u64),
            None => full.clone(),
        };
        let mut total = 0.0;
        for idx in &order {
            let (xb, yb) = if idx.len() == x.rows() && batch_size.is_none() {
                (x.clone(), labels_column(y))
            } else {
                let ys: Vec<u8> = idx.iter().map(|&i| y[i]).collect();
                (x.select_rows(idx), labels_column(&ys))
            };
            let mut g = Graph::new();
            let p = model.bind(&mut g, true);
            let xv = g.constant(xb);
            let logits = model.forward_logits(&mut g, &p, xv)?;
            let loss = g.bce_with_logits(logits, &yb)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Contract(format!(
                    "classifier loss became non-finite in epoch {epoch}"
                )));
            }
            total += value;
            g.backward(loss)?;
            let grads = model.grads(&g, &p);
            opt.step(model.params_mut(), &grads)?;
        }
        loss_history.push(total / order.len() as f64);
    }
    Ok(FittedClassifier { model, loss_history })
}

/// Trains the probe head on `encode(X)` of `train`; the stack itself is only
/// read.
pub fn train_probe(stack: &TrainedStack, train: &Dataset, spec: &ProbeSpec) -> Result<Probe> {
    spec.validate()?;
    reject_sensitive_input(train)?;
    if let Some(d) = stack.input_dim() {
        check_width("train_probe", train.x(), d)?;
    }
    let z = stack.encode_all(train.x())?;
    let head = fit_classifier(
        &z,
        train.y(),
        &[spec.hidden],
        spec.epochs,
        spec.lr,
        Some(spec.batch_size),
        spec.seed,
    )?;
    Ok(Probe {
        stack: stack.clone(),
        head,
    })
}

/// One dense layer and a sigmoid, full-batch Adam on BCE.
pub fn train_logreg(x: &Matrix, y: &[u8], spec: &LogRegSpec) -> Result<FittedClassifier> {
    if spec.epochs == 0 || !(spec.lr.is_finite() && spec.lr > 0.0) {
        return Err(Error::config(
            "logreg",
            "epochs must be >= 1 and lr finite and > 0",
        ));
    }
    fit_classifier(x, y, &[], spec.epochs, spec.lr, None, spec.seed)
}

pub(crate) fn reject_sensitive_input(d: &Dataset) -> Result<()> {
    if d.meta().sensitive_in_features {
        return Err(Error::Contract(format!(
            "dataset {} carries the sensitive attribute as a feature; downstream models must not read it",
            d.meta().name
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_spec_rejects_zero_width() {
        let s = ProbeSpec {
            hidden: 0,
            ..ProbeSpec::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn logreg_loss_decreases() {
        let x = Matrix::from_vec(40, 1, (0..40).map(|i| f64::from(i) / 10.0 - 2.0).collect()).unwrap();
        let y: Vec<u8> = (0..40).map(|i| u8::from(i >= 20)).collect();
        let m = train_logreg(&x, &y, &LogRegSpec::default()).unwrap();
        assert!(m.loss_history.last().unwrap() < &m.loss_history[0]);
        assert_eq!(m.model.layers.len(), 1);
    }

    #[test]
    fn classifier_shape_mismatch() {
        let x = Matrix::zeros(3, 2);
        assert!(matches!(
            fit_classifier(&x, &[0, 1], &[], 1, 0.1, None, 0),
            Err(Error::Dimension { .. })
        ));
    }
}
