//! Alternating min-max updates within a level and sequential training of the
//! stack.
//!
//! Per mini-batch the encoder, decoder and classifier take one Adam step on
//! `α·L_rec + γ·L_class − β·L_adv` with the adversary held fixed; then the
//! adversary alone takes `adversary_steps` Adam steps on `L_adv`. Minimizing
//! `−β·L_adv` is the gradient-reversal form of the encoder maximizing the
//! adversary's loss.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Graph, Matrix, Mlp};
use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::fairness::{self, PredictionBatch};
use crate::stack::{
    self, adversary_rows, record_adversary_loss, record_level, AdversaryOptions, BceForm, Level, LevelBatch,
    LossWeights, Provenance, ReconstructionLoss, StackSpec, Trainable, TrainedStack,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Epochs per level.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adversary_lr: f64,
    /// Adversary updates after each encoder/decoder/classifier update.
    pub adversary_steps: usize,
    pub seed: u64,
    /// Keep earlier levels fixed while training later ones. When off, earlier
    /// encoders are fine-tuned through the later levels' main objective.
    pub freeze_previous: bool,
    /// Start each level's adversary from the previous level's adversary when
    /// their shapes match.
    pub adversary_warm_start: bool,
    /// Label class whose rows feed the equal-opportunity adversary.
    pub eopp_label: u8,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 64,
            lr: 0.01,
            adversary_lr: 0.01,
            adversary_steps: 1,
            seed: 0,
            freeze_previous: true,
            adversary_warm_start: false,
            eopp_label: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch", "must be >= 1"));
        }
        if self.adversary_steps == 0 {
            return Err(Error::config("train.adversary_steps", "must be >= 1"));
        }
        for (f, v) in [("train.lr", self.lr), ("train.adversary_lr", self.adversary_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(f, format!("must be finite and > 0, got {v}")));
            }
        }
        if self.eopp_label > 1 {
            return Err(Error::config("train.eopp_label", "must be 0 or 1"));
        }
        Ok(())
    }

    /// Seed of the batch order of level `level`.
    pub fn level_seed(&self, level: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(level as u64 + 1)
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub level: usize,
    pub epoch: usize,
    /// Mean over the epoch's batches; empty when the decoder is inactive (α = 0).
    pub loss_rec: Option<f64>,
    pub loss_adv: Option<f64>,
    pub loss_class: f64,
    /// Adversary accuracy on the held-out rows it would see.
    pub adv_acc: Option<f64>,
    /// Gaps of the level classifier on held-out rows.
    pub val_dp: Option<f64>,
    pub val_eo: Option<f64>,
    pub val_eopp: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let records = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(TrainLog { records })
    }
}

/// Losses of one main step, evaluated before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub rec: Option<f64>,
    pub class: f64,
    pub adv: Option<f64>,
}

/// Optimizer state for the alternating updates of one level.
pub struct LevelTrainer<'a> {
    pub level: &'a mut Level,
    /// Earlier encoders trained through this level; empty when frozen.
    pub upstream: &'a mut [Mlp],
    weights: LossWeights,
    opts: AdversaryOptions,
    reconstruction: ReconstructionLoss,
    main_opt: AdamState,
    adv_opt: AdamState,
    upstream_opt: AdamState,
}

impl<'a> LevelTrainer<'a> {
    pub fn new(
        level: &'a mut Level,
        upstream: &'a mut [Mlp],
        weights: LossWeights,
        reconstruction: ReconstructionLoss,
        cfg: &TrainConfig,
    ) -> Self {
        let mut main_shapes = level.encoder.param_shapes();
        main_shapes.extend(level.decoder.param_shapes());
        main_shapes.extend(level.classifier.param_shapes());
        let up_shapes: Vec<_> = upstream.iter().flat_map(Mlp::param_shapes).collect();
        let opts = AdversaryOptions {
            criterion: level.spec.criterion,
            eopp_label: cfg.eopp_label,
        };
        LevelTrainer {
            main_opt: AdamState::new(AdamConfig::with_lr(cfg.lr), &main_shapes),
            adv_opt: AdamState::new(
                AdamConfig::with_lr(cfg.adversary_lr),
                &level.adversary.param_shapes(),
            ),
            upstream_opt: AdamState::new(AdamConfig::with_lr(cfg.lr), &up_shapes),
            level,
            upstream,
            weights,
            opts,
            reconstruction,
        }
    }

    pub fn adversary_options(&self) -> AdversaryOptions {
        self.opts
    }

    /// One update of encoder, decoder and classifier (and fine-tuned upstream
    /// encoders) on `α·rec + γ·class − β·adv`, adversary fixed.
    pub fn main_step(&mut self, batch: &LevelBatch) -> Result<StepLosses> {
        let with_rec = self.weights.alpha > 0.0;
        let fine_tune = !self.upstream.is_empty();
        let mut lg = record_level(
            self.level,
            self.upstream,
            batch,
            self.opts,
            self.reconstruction,
            with_rec,
            Trainable {
                upstream: fine_tune,
                encoder: true,
                decoder: true,
                classifier: true,
                adversary: false,
            },
        )?;
        let objective = lg.combine(self.weights, -1.0)?;
        let losses = StepLosses {
            rec: lg.rec.map(|v| lg.graph.scalar(v)),
            class: lg.graph.scalar(lg.class),
            adv: lg.adv.map(|v| lg.graph.scalar(v)),
        };
        if !lg.graph.scalar(objective).is_finite() {
            return Ok(losses);
        }
        lg.graph.backward(objective)?;

        let g = &lg.graph;
        let mut grads = self.level.encoder.grads(g, &lg.encoder);
        match &lg.decoder {
            Some(d) => grads.extend(self.level.decoder.grads(g, d)),
            None => grads.extend(
                self.level
                    .decoder
                    .param_shapes()
                    .into_iter()
                    .map(|(r, c)| Matrix::zeros(r, c)),
            ),
        }
        grads.extend(self.level.classifier.grads(g, &lg.classifier));
        let level = &mut *self.level;
        let mut params = level.encoder.params_mut();
        params.extend(level.decoder.params_mut());
        params.extend(level.classifier.params_mut());
        self.main_opt.step(params, &grads)?;

        if fine_tune {
            let up_grads: Vec<Matrix> = self
                .upstream
                .iter()
                .zip(&lg.upstream)
                .flat_map(|(m, p)| m.grads(g, p))
                .collect();
            let up_params: Vec<&mut Matrix> = self.upstream.iter_mut().flat_map(Mlp::params_mut).collect();
            self.upstream_opt.step(up_params, &up_grads)?;
        }
        Ok(losses)
    }

    /// Latent code of the batch under the current (fixed) encoders.
    pub fn latent(&self, input: &Matrix) -> Result<Matrix> {
        let mut h = input.clone();
        for m in self.upstream.iter() {
            h = m.forward_value(&h)?;
        }
        self.level.encoder.forward_value(&h)
    }

    /// Adversary loss on `batch` with the current parameters.
    pub fn adversary_loss(&self, batch: &LevelBatch) -> Result<Option<f64>> {
        let z = self.latent(&batch.input)?;
        let mut g = Graph::new();
        let p = self.level.adversary.bind(&mut g, false);
        let zv = g.constant(z);
        let loss = record_adversary_loss(
            &mut g,
            &self.level.adversary,
            &p,
            zv,
            &batch.y,
            &batch.s,
            self.opts,
            BceForm::Logits,
        )?;
        Ok(loss.map(|v| g.scalar(v)))
    }

    /// One update of the adversary alone on `L_adv`. Returns the pre-step
    /// loss, or `None` when the batch has no row for the adversary.
    pub fn adversary_step(&mut self, batch: &LevelBatch) -> Result<Option<f64>> {
        let z = self.latent(&batch.input)?;
        let mut g = Graph::new();
        let p = self.level.adversary.bind(&mut g, true);
        let zv = g.constant(z);
        let Some(loss) = record_adversary_loss(
            &mut g,
            &self.level.adversary,
            &p,
            zv,
            &batch.y,
            &batch.s,
            self.opts,
            BceForm::Logits,
        )?
        else {
            return Ok(None);
        };
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Ok(Some(value));
        }
        g.backward(loss)?;
        let grads = self.level.adversary.grads(&g, &p);
        self.adv_opt.step(self.level.adversary.params_mut(), &grads)?;
        Ok(Some(value))
    }

    /// Held-out adversary accuracy and classifier gaps.
    fn validate(&self, val: &LevelBatch) -> Result<(Option<f64>, Option<fairness::FairnessReport>)> {
        let z = self.latent(&val.input)?;
        let rows = adversary_rows(&val.y, self.opts);
        let adv_acc = if rows.is_empty() {
            None
        } else {
            let zs = z.select_rows(&rows);
            let input = match self.opts.criterion {
                stack::Criterion::Eo => {
                    let ys: Vec<u8> = rows.iter().map(|&i| val.y[i]).collect();
                    zs.hcat(&crate::data::labels_column(&ys))?
                }
                _ => zs,
            };
            let p = self.level.adversary.forward_value(&input)?;
            let correct = rows
                .iter()
                .zip(p.data())
                .filter(|(&i, &p)| u8::from(p >= 0.5) == val.s[i])
                .count();
            Some(correct as f64 / rows.len() as f64)
        };
        let scores = self.level.classifier.forward_value(&z)?;
        let report = PredictionBatch::from_scores(scores.data(), 0.5, val.y.clone(), val.s.clone())
            .map(|b| fairness::evaluate(&b))
            .ok();
        Ok((adv_acc, report))
    }
}

/// Trains one level on precomputed inputs. `level_index` only labels the log
/// and selects the batch-order seed.
pub fn train_level(
    level: &mut Level,
    train: &LevelBatch,
    validation: Option<&LevelBatch>,
    weights: LossWeights,
    reconstruction: ReconstructionLoss,
    cfg: &TrainConfig,
    level_index: usize,
) -> Result<TrainLog> {
    train_level_with_upstream(
        level,
        &mut [],
        train,
        validation,
        weights,
        reconstruction,
        cfg,
        level_index,
    )
}

#[allow(clippy::too_many_arguments)]
fn train_level_with_upstream(
    level: &mut Level,
    upstream: &mut [Mlp],
    train: &LevelBatch,
    validation: Option<&LevelBatch>,
    weights: LossWeights,
    reconstruction: ReconstructionLoss,
    cfg: &TrainConfig,
    level_index: usize,
) -> Result<TrainLog> {
    cfg.validate()?;
    weights.validate()?;
    if train.is_empty() {
        return Err(Error::Contract("cannot train a level on zero rows".into()));
    }
    let seed = cfg.level_seed(level_index);
    let mut trainer = LevelTrainer::new(level, upstream, weights, reconstruction, cfg);
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let mut sum_rec = 0.0;
        let mut sum_class = 0.0;
        let (mut sum_adv, mut adv_batches) = (0.0, 0usize);
        let order = batches(train.len(), cfg.batch_size, seed, epoch as u64);
        let n_batches = order.len();
        for (bi, idx) in order.iter().enumerate() {
            let b = train.rows(idx);
            let diverged = |what| Error::Divergence {
                level: level_index,
                epoch,
                batch: bi,
                what,
            };
            let l = trainer.main_step(&b)?;
            if !l.class.is_finite() {
                return Err(diverged("classification loss"));
            }
            if l.rec.is_some_and(|v| !v.is_finite()) {
                return Err(diverged("reconstruction loss"));
            }
            if l.adv.is_some_and(|v| !v.is_finite()) {
                return Err(diverged("adversary loss"));
            }
            sum_class += l.class;
            sum_rec += l.rec.unwrap_or(0.0);
            if let Some(a) = l.adv {
                sum_adv += a;
                adv_batches += 1;
            }
            for _ in 0..cfg.adversary_steps {
                if trainer.adversary_step(&b)?.is_some_and(|v| !v.is_finite()) {
                    return Err(diverged("adversary loss"));
                }
            }
        }
        if !(trainer.level.encoder.is_finite() && trainer.upstream.iter().all(Mlp::is_finite)) {
            return Err(Error::Divergence {
                level: level_index,
                epoch,
                batch: n_batches.saturating_sub(1),
                what: "encoder weights",
            });
        }

        let (adv_acc, report) = match validation {
            Some(v) if !v.is_empty() => trainer.validate(v)?,
            _ => (None, None),
        };
        let nb = n_batches as f64;
        log.records.push(EpochRecord {
            level: level_index,
            epoch,
            loss_rec: (weights.alpha > 0.0).then_some(sum_rec / nb),
            loss_adv: (adv_batches > 0).then(|| sum_adv / adv_batches as f64),
            loss_class: sum_class / nb,
            adv_acc,
            val_dp: report.as_ref().and_then(|r| r.delta_dp),
            val_eo: report.as_ref().and_then(|r| r.delta_eo),
            val_eopp: report.as_ref().and_then(|r| r.delta_eopp),
        });
    }
    level.trained = true;
    Ok(log)
}

/// Everything `train_stack` produces. `levels` keeps the auxiliary networks
/// for inspection; only `stack` is needed downstream.
#[derive(Debug, Clone)]
pub struct StackOutcome {
    pub stack: TrainedStack,
    pub levels: Vec<Level>,
    pub logs: Vec<TrainLog>,
}

/// Trains the levels of `spec` in order. Before level `i + 1` starts, the
/// codes `z_i` of all training rows are computed once from the (frozen)
/// earlier encoders.
pub fn train_stack(
    spec: &StackSpec,
    train: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<StackOutcome> {
    cfg.validate()?;
    if spec.input_dim() != train.dim() {
        return Err(Error::config(
            "stack.levels[0]",
            format!(
                "input width {} does not match dataset width {}",
                spec.input_dim(),
                train.dim()
            ),
        ));
    }
    let mut levels = stack::build(spec, cfg.seed)?;
    let mut logs = Vec::with_capacity(levels.len());
    let mut z_train = train.x().clone();
    let mut z_val = validation.map(|v| v.x().clone());

    for i in 0..levels.len() {
        if i > 0 && cfg.adversary_warm_start {
            let prev = levels[i - 1].adversary.clone();
            if prev.param_shapes() == levels[i].adversary.param_shapes() {
                levels[i].adversary = prev;
            }
        }
        let (done, rest) = levels.split_at_mut(i);
        let level = &mut rest[0];
        let log = if cfg.freeze_previous || i == 0 {
            let tb = LevelBatch::new(z_train.clone(), train.y().to_vec(), train.s().to_vec())?;
            let vb = match (&z_val, validation) {
                (Some(z), Some(v)) => Some(LevelBatch::new(z.clone(), v.y().to_vec(), v.s().to_vec())?),
                _ => None,
            };
            train_level(level, &tb, vb.as_ref(), spec.weights, spec.reconstruction, cfg, i)
        } else {
            let tb = LevelBatch::new(train.x().clone(), train.y().to_vec(), train.s().to_vec())?;
            let vb = validation
                .map(|v| LevelBatch::new(v.x().clone(), v.y().to_vec(), v.s().to_vec()))
                .transpose()?;
            let mut upstream: Vec<Mlp> = done.iter().map(|l| l.encoder.clone()).collect();
            let log = train_level_with_upstream(
                level,
                &mut upstream,
                &tb,
                vb.as_ref(),
                spec.weights,
                spec.reconstruction,
                cfg,
                i,
            );
            for (l, enc) in done.iter_mut().zip(upstream) {
                l.encoder = enc;
            }
            log
        }
        .map_err(|e| e.at_level(i))?;
        logs.push(log);

        if cfg.freeze_previous {
            z_train = levels[i].encoder.forward_value(&z_train)?;
            z_val = z_val.map(|z| levels[i].encoder.forward_value(&z)).transpose()?;
        } else {
            let encoders: Vec<Mlp> = levels[..=i].iter().map(|l| l.encoder.clone()).collect();
            z_train = stack::encode(&encoders, train.x(), i + 1)?;
            z_val = validation
                .map(|v| stack::encode(&encoders, v.x(), i + 1))
                .transpose()?;
        }
    }

    let stack = TrainedStack::from_levels(
        &levels,
        Provenance {
            spec_hash: spec.hash(),
            seed: cfg.seed,
            dataset: Some(train.summary()),
            normalization: Some(train.stats().clone()),
        },
    )?;
    Ok(StackOutcome { stack, levels, logs })
}

/// Baseline with a single adversary on the final code: one level whose
/// encoder is `input → hidden… → latent`.
pub fn train_vanilla_lafr(
    hidden: &[usize],
    latent: usize,
    criterion: stack::Criterion,
    weights: LossWeights,
    train: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<StackOutcome> {
    let spec = StackSpec::single_level(train.dim(), hidden, latent, criterion, weights);
    train_stack(&spec, train, validation, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack::Criterion;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("train.epochs"));
        let bad = TrainConfig {
            adversary_steps: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn level_seeds_differ() {
        let c = TrainConfig::default();
        assert_ne!(c.level_seed(0), c.level_seed(1));
    }

    #[test]
    fn log_csv_round_trip() {
        let log = TrainLog {
            records: vec![EpochRecord {
                level: 1,
                epoch: 3,
                loss_rec: None,
                loss_adv: Some(0.5),
                loss_class: 0.25,
                adv_acc: Some(0.6),
                val_dp: Some(0.1),
                val_eo: None,
                val_eopp: Some(0.0),
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        log.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("level,epoch,loss_rec,loss_adv,loss_class,adv_acc,val_dp,val_eo,val_eopp"));
        assert_eq!(TrainLog::read_csv(&p).unwrap(), log);
    }

    #[test]
    fn divergence_is_reported_with_location() {
        let spec = StackSpec::single_level(2, &[], 1, Criterion::Dp, LossWeights::new(0.0, 1.0, 1.0));
        let mut level = stack::build(&spec, 0).unwrap().remove(0);
        level.encoder.layers[0].weight.data_mut()[0] = f64::NAN;
        let b = LevelBatch::new(
            Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]),
            vec![0, 1],
            vec![1, 0],
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let err = train_level(
            &mut level,
            &b,
            None,
            spec.weights,
            ReconstructionLoss::Mse,
            &cfg,
            2,
        )
        .unwrap_err();
        assert!(
            matches!(
                err,
                Error::Divergence {
                    level: 2,
                    epoch: 0,
                    batch: 0,
                    ..
                }
            ),
            "{err}"
        );
    }
}
