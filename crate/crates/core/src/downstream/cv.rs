use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    reject_sensitive_input, train_forest, train_logreg, train_probe, ForestSpec, LogRegSpec, ProbeSpec,
};
use crate::data::{Dataset, SplitPlan};
use crate::error::{Error, Result};
use crate::fairness::{evaluate, FairnessReport, PredictionBatch};
use crate::stack::TrainedStack;

/// Downstream model family together with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Probe(ProbeSpec),
    LogisticRegression(LogRegSpec),
    RandomForest(ForestSpec),
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Probe(_) => "probe",
            ModelKind::LogisticRegression(_) => "logistic_regression",
            ModelKind::RandomForest(_) => "random_forest",
        }
    }

    /// Fits on the encoded training fold and returns test-fold predictions.
    fn fit_predict(&self, train: &Dataset, stack: &TrainedStack, test: &Dataset) -> Result<Vec<u8>> {
        match self {
            ModelKind::Probe(spec) => train_probe(stack, train, spec)?.predict(test.x()),
            ModelKind::LogisticRegression(spec) => {
                let m = train_logreg(&stack.encode_all(train.x())?, train.y(), spec)?;
                m.predict(&stack.encode_all(test.x())?)
            }
            ModelKind::RandomForest(spec) => {
                let f = train_forest(&stack.encode_all(train.x())?, train.y(), spec)?;
                f.predict(&stack.encode_all(test.x())?)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std, n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub accuracy: MeanStd,
    pub delta_dp: MeanStd,
    pub delta_eo: MeanStd,
    pub delta_eopp: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub model: String,
    /// Per fold, in fold order.
    pub reports: Vec<FairnessReport>,
    pub summary: CvSummary,
}

/// Mean and sample std of each headline metric. Any fold with an undefined
/// metric is an error naming the fold.
pub fn aggregate(reports: &[FairnessReport]) -> Result<CvSummary> {
    if reports.is_empty() {
        return Err(Error::Contract("no fold reports to aggregate".into()));
    }
    let column = |name: &str, get: fn(&FairnessReport) -> Option<f64>| -> Result<MeanStd> {
        let vals = reports
            .iter()
            .enumerate()
            .map(|(i, r)| {
                get(r).ok_or_else(|| Error::UndefinedMetric(format!("{name} undefined in fold {i}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(MeanStd::of(&vals))
    };
    Ok(CvSummary {
        accuracy: column("accuracy", |r| r.accuracy)?,
        delta_dp: column("delta_dp", |r| r.delta_dp)?,
        delta_eo: column("delta_eo", |r| r.delta_eo)?,
        delta_eopp: column("delta_eopp", |r| r.delta_eopp)?,
    })
}

/// For each fold: re-fit standardization on the training rows, obtain a stack
/// from `encoder(fold, train_rows)`, fit `kind` on the encoded training rows
/// and score the test rows. Folds run in parallel; results keep fold order.
pub fn cross_validate<F>(
    kind: &ModelKind,
    dataset: &Dataset,
    plan: &SplitPlan,
    encoder: F,
) -> Result<CvResult>
where
    F: Fn(usize, &Dataset) -> Result<TrainedStack> + Sync,
{
    reject_sensitive_input(dataset)?;
    if plan.folds.iter().map(Vec::len).sum::<usize>() != dataset.len() {
        return Err(Error::Contract(format!(
            "split plan covers {} rows but dataset has {}",
            plan.folds.iter().map(Vec::len).sum::<usize>(),
            dataset.len()
        )));
    }
    let reports = (0..plan.k())
        .into_par_iter()
        .map(|fold| {
            let train_idx = plan.train_indices(fold);
            let scaled = dataset.standardized_on(&train_idx);
            let train = scaled.subset(&train_idx);
            let test = scaled.subset(plan.test_indices(fold));
            let stack = encoder(fold, &train)?;
            let pred = kind.fit_predict(&train, &stack, &test)?;
            let batch = PredictionBatch::new(pred, test.y().to_vec(), test.s().to_vec())?;
            Ok(evaluate(&batch))
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = aggregate(&reports)?;
    Ok(CvResult {
        model: kind.name().to_string(),
        reports,
        summary,
    })
}

/// One model row: cells for raw features, the single-adversary encoding and
/// the stacked encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    /// `None` when that cell's run failed.
    pub unfair: Option<MeanStd>,
    pub lafr: Option<MeanStd>,
    pub stacked: Option<MeanStd>,
}

/// Cross-validated ΔDP by model and representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub dataset: String,
    pub metric: String,
    /// What the `std` fields measure.
    pub spread: String,
    pub folds: usize,
    pub rows: Vec<TableRow>,
}

impl ComparisonTable {
    pub fn new(dataset: impl Into<String>, folds: usize, rows: Vec<TableRow>) -> Self {
        ComparisonTable {
            dataset: dataset.into(),
            metric: "delta_dp".into(),
            spread: "sample standard deviation across folds".into(),
            folds,
            rows,
        }
    }

    pub fn row(&self, model: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// `model,unfair_mean,unfair_std,lafr_mean,lafr_std,stacked_mean,stacked_std`.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("model,unfair_mean,unfair_std,lafr_mean,lafr_std,stacked_mean,stacked_std\n");
        let cell = |c: &Option<MeanStd>| match c {
            Some(m) => format!("{},{}", m.mean, m.std),
            None => ",".to_string(),
        };
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.model,
                cell(&r.unfair),
                cell(&r.lafr),
                cell(&r.stacked)
            ));
        }
        out
    }
}
