use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DatasetId, ExperimentConfig};
use crate::data::{load_adult, load_german, make_folds, train_validation_split, Dataset, DatasetSummary};
use crate::downstream::{
    cross_validate, train_probe, ComparisonTable, CvResult, ForestSpec, LogRegSpec, MeanStd, ModelKind,
    TableRow,
};
use crate::error::{Error, Result};
use crate::fairness::{evaluate, FairnessReport, PredictionBatch};
use crate::stack::{Criterion, StackSpec, TrainedStack};
use crate::train::{train_stack, TrainConfig};

/// Creates `<out_dir>/<command>-<unix millis>`, adding a suffix if that name
/// is taken. Never reuses an existing directory.
pub fn create_run_dir(out_dir: &Path, command: &str) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let millis = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    for suffix in 0u32.. {
        let name = if suffix == 0 {
            format!("{command}-{millis}")
        } else {
            format!("{command}-{millis}-{suffix}")
        };
        let dir = out_dir.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("suffix space exhausted")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Contract(format!("cannot start worker pool: {e}")))
}

/// Train/validation split of one seed, standardized on the training rows.
pub struct Holdout {
    pub train: Dataset,
    pub validation: Dataset,
}

pub fn holdout(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Holdout> {
    let (tr, va) = train_validation_split(dataset.len(), fraction, seed)?;
    let scaled = dataset.standardized_on(&tr);
    Ok(Holdout {
        train: scaled.subset(&tr),
        validation: scaled.subset(&va),
    })
}

/// Trains a probe on `train` through `stack` and scores it on `eval`.
pub fn probe_report(
    stack: &TrainedStack,
    train: &Dataset,
    eval: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<FairnessReport> {
    let probe = train_probe(stack, train, &cfg.probe_spec(seed))?;
    let pred = probe.predict(eval.x())?;
    Ok(evaluate(&PredictionBatch::new(
        pred,
        eval.y().to_vec(),
        eval.s().to_vec(),
    )?))
}

/// Provenance of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub beta: f64,
    pub criterion: Criterion,
    pub variant: String,
    pub wall_time_secs: f64,
    /// Probe trained on the training rows, scored on the validation rows.
    pub probe: FairnessReport,
    pub probe_rows: String,
    pub train_logs: Vec<PathBuf>,
    pub model: PathBuf,
    pub decoder_active: bool,
    pub notes: Vec<String>,
    pub dataset: DatasetSummary,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub dir: PathBuf,
    pub record: RunRecord,
}

/// Trains the configured stack with the first seed and writes `model.fstk`,
/// `train_log_level<i>.csv`, `config.json` and `run_record.json`.
pub fn fit(cfg: &ExperimentConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let seed = cfg.seeds[0];
    let dataset = cfg.load_dataset()?;
    let split = holdout(&dataset, cfg.train.validation_fraction, seed)?;
    let spec = cfg.stacked_spec(dataset.dim(), cfg.weights());
    spec.validate()?;
    let tcfg = cfg.train_config(seed);
    let has_val = !split.validation.is_empty();
    let outcome = train_stack(&spec, &split.train, has_val.then_some(&split.validation), &tcfg)?;

    let dir = create_run_dir(&cfg.out_dir, "fit")?;
    write_json(&dir.join("config.json"), cfg)?;
    let model = dir.join("model.fstk");
    outcome.stack.save(&model)?;
    let mut train_logs = Vec::new();
    for (i, log) in outcome.logs.iter().enumerate() {
        let p = dir.join(format!("train_log_level{i}.csv"));
        log.write_csv(&p)?;
        train_logs.push(p);
    }
    let (eval, probe_rows) = if has_val {
        (&split.validation, "validation")
    } else {
        (&split.train, "train")
    };
    let probe = probe_report(&outcome.stack, &split.train, eval, cfg, seed)?;

    let decoder_active = cfg.loss.alpha > 0.0;
    let mut notes = Vec::new();
    if !decoder_active {
        notes.push("decoder inactive: alpha = 0, reconstruction loss not trained or logged".to_string());
    }
    let record = RunRecord {
        config_hash: cfg.hash(),
        seed,
        beta: cfg.loss.beta,
        criterion: cfg.criterion,
        variant: "stacked".into(),
        wall_time_secs: started.elapsed().as_secs_f64(),
        probe,
        probe_rows: probe_rows.into(),
        train_logs,
        model,
        decoder_active,
        notes,
        dataset: split.train.summary(),
    };
    write_json(&dir.join("run_record.json"), &record)?;
    Ok(FitOutcome { dir, record })
}

/// Where `transform` reads its input from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    /// Numeric CSV with a header row, one column per model input.
    Features,
    /// A raw dataset file, encoded and standardized like the training data.
    Raw(DatasetId),
}

/// Encodes every input row with the full stack and writes `z_0..z_{k-1}` CSV.
/// Returns the number of rows written.
pub fn transform(model: &Path, input: &Path, output: &Path, format: InputFormat) -> Result<usize> {
    let stack = TrainedStack::load(model)?;
    let x = match format {
        InputFormat::Features => read_feature_csv(input, stack.input_dim())?,
        InputFormat::Raw(id) => {
            let ds = match id {
                DatasetId::Adult => load_adult(input)?,
                DatasetId::German => load_german(input)?,
            };
            let ds = match &stack.provenance.normalization {
                Some(stats) => ds.with_stats(stats)?,
                None => ds,
            };
            ds.x().clone()
        }
    };
    if let Some(d) = stack.input_dim() {
        if x.cols() != d && x.rows() > 0 {
            return Err(Error::Contract(format!(
                "input has {} columns but the model expects {d}",
                x.cols()
            )));
        }
    }
    let width = stack.output_dim().unwrap_or(x.cols());
    let z = if x.rows() == 0 {
        crate::autodiff::Matrix::zeros(0, width)
    } else {
        stack.encode_all(&x)?
    };
    let mut w = csv::Writer::from_path(output)?;
    w.write_record((0..width).map(|i| format!("z_{i}")))?;
    for r in 0..z.rows() {
        w.write_record(z.row(r).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(z.rows())
}

fn read_feature_csv(path: &Path, expected: Option<usize>) -> Result<crate::autodiff::Matrix> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = expected.unwrap_or(0);
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rows == 0 && expected.is_none() {
            cols = rec.len();
        }
        if rec.len() != cols {
            return Err(Error::Contract(format!(
                "input row {} has {} columns but the model expects {cols}",
                i + 1,
                rec.len()
            )));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::load(
                    path,
                    format!("row {}, column {}: {field:?} is not a number", i + 1, j + 1),
                )
            })?;
            data.push(v);
        }
        rows += 1;
    }
    crate::autodiff::Matrix::from_vec(rows, cols, data)
}

/// One probe evaluation in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Empty for the unfair baseline, which has no adversary.
    pub beta: Option<f64>,
    pub seed: u64,
    pub variant: String,
    pub status: String,
    pub accuracy: Option<f64>,
    pub delta_dp: Option<f64>,
    pub delta_eo: Option<f64>,
    pub delta_eopp: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    fn from_result(beta: Option<f64>, seed: u64, variant: &str, r: Result<FairnessReport>) -> Self {
        let (status, report, error) = match r {
            Ok(rep) => ("ok", Some(rep), None),
            Err(e) => ("failed", None, Some(e.to_string())),
        };
        SweepRow {
            beta,
            seed,
            variant: variant.into(),
            status: status.into(),
            accuracy: report.as_ref().and_then(|r| r.accuracy),
            delta_dp: report.as_ref().and_then(|r| r.delta_dp),
            delta_eo: report.as_ref().and_then(|r| r.delta_eo),
            delta_eopp: report.as_ref().and_then(|r| r.delta_eopp),
            error,
        }
    }

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Mean over the successful runs of one `(β, variant)` group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMean {
    pub beta: Option<f64>,
    pub variant: String,
    pub runs: usize,
    pub accuracy: Option<f64>,
    pub delta_dp: Option<f64>,
    pub delta_eo: Option<f64>,
    pub delta_eopp: Option<f64>,
}

/// Groups rows by `(β, variant)` in first-seen order and averages each
/// metric over the rows where it is defined.
pub fn sweep_means(rows: &[SweepRow]) -> Vec<SweepMean> {
    let mut keys: Vec<(Option<f64>, String)> = Vec::new();
    for r in rows {
        let k = (r.beta, r.variant.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(beta, variant)| {
            let group: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.beta == beta && r.variant == variant && r.ok())
                .collect();
            let mean = |get: fn(&SweepRow) -> Option<f64>| {
                let v: Vec<f64> = group.iter().filter_map(|r| get(r)).collect();
                (!v.is_empty()).then(|| MeanStd::of(&v).mean)
            };
            SweepMean {
                beta,
                runs: group.len(),
                accuracy: mean(|r| r.accuracy),
                delta_dp: mean(|r| r.delta_dp),
                delta_eo: mean(|r| r.delta_eo),
                delta_eopp: mean(|r| r.delta_eopp),
                variant,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub config_hash: String,
    /// `(β, seed, variant)` rows, β-major, then seed, then stacked before vanilla.
    pub rows: Vec<SweepRow>,
    /// Probe on raw features, one row per seed.
    pub baseline: Vec<SweepRow>,
    /// Per-β means of `rows`, followed by the baseline mean.
    pub means: Vec<SweepMean>,
    #[serde(skip)]
    pub dir: PathBuf,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.rows.iter().chain(&self.baseline).filter(|r| !r.ok()).count()
    }

    pub fn mean(&self, beta: Option<f64>, variant: &str) -> Option<&SweepMean> {
        self.means.iter().find(|m| m.beta == beta && m.variant == variant)
    }
}

pub const STACKED: &str = "stacked";
pub const VANILLA: &str = "vanilla";
pub const UNFAIR: &str = "unfair";

fn run_variant(
    spec: &StackSpec,
    split: &Holdout,
    tcfg: &TrainConfig,
    cfg: &ExperimentConfig,
) -> Result<FairnessReport> {
    let out = train_stack(spec, &split.train, None, tcfg)?;
    probe_report(&out.stack, &split.train, &split.validation, cfg, tcfg.seed)
}

/// Trains the stacked and single-adversary variants for every `(β, seed)`
/// and probes each on the seed's validation rows. Failed runs become
/// `failed` rows; the sweep carries on.
pub fn sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<SweepOutcome> {
    cfg.validate()?;
    if cfg.sweep.betas.is_empty() {
        return Err(Error::config("sweep.betas", "must list at least one value"));
    }
    if cfg.train.validation_fraction.is_nan() || cfg.train.validation_fraction <= 0.0 {
        return Err(Error::config(
            "train.validation_fraction",
            "sweeps need a validation split",
        ));
    }
    let dataset = cfg.load_dataset()?;
    let splits: Vec<Holdout> = cfg
        .seeds
        .iter()
        .map(|&s| holdout(&dataset, cfg.train.validation_fraction, s))
        .collect::<Result<_>>()?;

    let mut tasks = Vec::new();
    for &beta in &cfg.sweep.betas {
        for si in 0..cfg.seeds.len() {
            for variant in [STACKED, VANILLA] {
                tasks.push((beta, si, variant));
            }
        }
    }
    let pool = thread_pool(jobs)?;
    let (rows, baseline) = pool.install(|| {
        let rows: Vec<SweepRow> = tasks
            .par_iter()
            .map(|&(beta, si, variant)| {
                let mut w = cfg.weights();
                w.beta = beta;
                let spec = match variant {
                    STACKED => cfg.stacked_spec(dataset.dim(), w),
                    _ => cfg.vanilla_spec(dataset.dim(), w),
                };
                let seed = cfg.seeds[si];
                let r = run_variant(&spec, &splits[si], &cfg.train_config(seed), cfg);
                SweepRow::from_result(Some(beta), seed, variant, r)
            })
            .collect();
        let baseline: Vec<SweepRow> = (0..cfg.seeds.len())
            .into_par_iter()
            .map(|si| {
                let seed = cfg.seeds[si];
                let split = &splits[si];
                let r = probe_report(
                    &TrainedStack::identity(),
                    &split.train,
                    &split.validation,
                    cfg,
                    seed,
                );
                SweepRow::from_result(None, seed, UNFAIR, r)
            })
            .collect();
        (rows, baseline)
    });

    let mut means = sweep_means(&rows);
    means.extend(sweep_means(&baseline));
    let dir = create_run_dir(&cfg.out_dir, "sweep")?;
    let outcome = SweepOutcome {
        config_hash: cfg.hash(),
        rows,
        baseline,
        means,
        dir: dir.clone(),
    };
    write_json(&dir.join("config.json"), cfg)?;
    write_csv(&dir.join("sweep.csv"), &outcome.rows)?;
    write_csv(&dir.join("baseline.csv"), &outcome.baseline)?;
    write_csv(&dir.join("sweep_means.csv"), &outcome.means)?;
    write_json(&dir.join("sweep.json"), &outcome)?;
    Ok(outcome)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One cross-validated cell of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub model: String,
    pub variant: String,
    pub result: Option<CvResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Outcome {
    pub config_hash: String,
    pub seed: u64,
    pub dataset: DatasetSummary,
    pub logistic_regression: LogRegSpec,
    pub random_forest: ForestSpec,
    pub table: ComparisonTable,
    pub cells: Vec<CellResult>,
    #[serde(skip)]
    pub dir: PathBuf,
}

impl Table1Outcome {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_none()).count()
    }
}

/// k-fold ΔDP for logistic regression and random forest on raw features, the
/// single-adversary encoding and the stacked encoding. Every column uses the
/// same folds; encoders are trained per fold on that fold's training rows.
pub fn table1(cfg: &ExperimentConfig, jobs: usize) -> Result<Table1Outcome> {
    cfg.validate()?;
    let seed = cfg.seeds[0];
    let dataset = cfg.load_dataset()?;
    let plan = make_folds(dataset.len(), cfg.table1.folds, seed)?;
    let tcfg = cfg.train_config(seed);
    let w = cfg.weights();
    let specs = [
        (VANILLA, cfg.vanilla_spec(dataset.dim(), w)),
        (STACKED, cfg.stacked_spec(dataset.dim(), w)),
    ];
    let pool = thread_pool(jobs)?;

    // Each fold's encoders are shared by both downstream models.
    let fold_stacks: Vec<Vec<Result<TrainedStack>>> = pool.install(|| {
        specs
            .par_iter()
            .map(|(_, spec)| {
                (0..plan.k())
                    .into_par_iter()
                    .map(|f| {
                        let idx = plan.train_indices(f);
                        let train = dataset.standardized_on(&idx).subset(&idx);
                        train_stack(spec, &train, None, &tcfg).map(|o| o.stack)
                    })
                    .collect()
            })
            .collect()
    });

    let models = [
        ModelKind::LogisticRegression(cfg.logreg_spec(seed)),
        ModelKind::RandomForest(cfg.forest_spec(seed)),
    ];
    let mut cells = Vec::new();
    let mut rows = Vec::new();
    for kind in &models {
        let mut row = TableRow {
            model: kind.name().into(),
            unfair: None,
            lafr: None,
            stacked: None,
        };
        for variant in [UNFAIR, VANILLA, STACKED] {
            let result = pool.install(|| match variant {
                UNFAIR => cross_validate(kind, &dataset, &plan, |_, _| Ok(TrainedStack::identity())),
                _ => {
                    let vi = usize::from(variant == STACKED);
                    cross_validate(kind, &dataset, &plan, |f, _| match &fold_stacks[vi][f] {
                        Ok(s) => Ok(s.clone()),
                        Err(e) => Err(Error::Contract(format!(
                            "encoder training failed in fold {f}: {e}"
                        ))),
                    })
                }
            });
            let cell = result.as_ref().ok().map(|r| r.summary.delta_dp);
            match variant {
                UNFAIR => row.unfair = cell,
                VANILLA => row.lafr = cell,
                _ => row.stacked = cell,
            }
            let (result, error) = match result {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            cells.push(CellResult {
                model: kind.name().into(),
                variant: variant.into(),
                result,
                error,
            });
        }
        rows.push(row);
    }

    let dir = create_run_dir(&cfg.out_dir, "table1")?;
    let table = ComparisonTable::new(cfg.dataset.id.as_str(), plan.k(), rows);
    let outcome = Table1Outcome {
        config_hash: cfg.hash(),
        seed,
        dataset: dataset.summary(),
        logistic_regression: cfg.logreg_spec(seed),
        random_forest: cfg.forest_spec(seed),
        table,
        cells,
        dir: dir.clone(),
    };
    write_json(&dir.join("config.json"), cfg)?;
    write_json(&dir.join("table1.json"), &outcome)?;
    fs::write(dir.join("table1.csv"), outcome.table.to_csv())?;
    Ok(outcome)
}
