//! One level of the stack: encoder, decoder, label classifier and adversary.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, BoundParams, Graph, Matrix, Mlp, Var};
use crate::data::labels_column;
use crate::error::{Error, Result};
use crate::stack::spec::{Criterion, LevelSpec, LossWeights, ReconstructionLoss, StackSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub spec: LevelSpec,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub classifier: Mlp,
    pub adversary: Mlp,
    pub trained: bool,
}

impl Level {
    /// Initializes all four networks from `rng`, in the order
    /// encoder, decoder, classifier, adversary.
    pub fn new(spec: &LevelSpec, rng: &mut ChaCha8Rng) -> Self {
        let encoder = Mlp::new(
            &spec.encoder_dims(),
            Activation::LeakyRelu,
            spec.latent_activation,
            rng,
        );
        let decoder = Mlp::new(
            &spec.decoder_dims(),
            Activation::LeakyRelu,
            Activation::Identity,
            rng,
        );
        let classifier = Mlp::new(
            &[spec.latent_dim, spec.classifier_hidden, 1],
            Activation::LeakyRelu,
            Activation::Sigmoid,
            rng,
        );
        let adversary = new_adversary(spec, rng);
        Level {
            spec: spec.clone(),
            encoder,
            decoder,
            classifier,
            adversary,
            trained: false,
        }
    }
}

pub(crate) fn new_adversary(spec: &LevelSpec, rng: &mut ChaCha8Rng) -> Mlp {
    Mlp::new(
        &[spec.adversary_input_dim(), spec.adversary_hidden, 1],
        Activation::LeakyRelu,
        Activation::Sigmoid,
        rng,
    )
}

/// Builds every level of `spec`; deterministic per seed.
pub fn build(spec: &StackSpec, seed: u64) -> Result<Vec<Level>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(spec.levels.iter().map(|l| Level::new(l, &mut rng)).collect())
}

/// Inputs of one level for a set of rows. `input` is the previous level's code
/// (or the raw features when earlier encoders are fine-tuned in-graph).
#[derive(Debug, Clone)]
pub struct LevelBatch {
    pub input: Matrix,
    pub y: Vec<u8>,
    pub s: Vec<u8>,
}

impl LevelBatch {
    pub fn new(input: Matrix, y: Vec<u8>, s: Vec<u8>) -> Result<Self> {
        if y.len() != input.rows() || s.len() != input.rows() {
            return Err(Error::Contract(format!(
                "level batch has {} rows but {} labels and {} sensitive values",
                input.rows(),
                y.len(),
                s.len()
            )));
        }
        Ok(LevelBatch { input, y, s })
    }

    pub fn rows(&self, idx: &[usize]) -> LevelBatch {
        LevelBatch {
            input: self.input.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            s: idx.iter().map(|&i| self.s[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// How the adversary term is formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversaryOptions {
    pub criterion: Criterion,
    /// Label class whose rows feed the adversary under [`Criterion::Eopp`].
    pub eopp_label: u8,
}

/// Rows of `batch` the adversary sees.
pub fn adversary_rows(y: &[u8], opts: AdversaryOptions) -> Vec<usize> {
    match opts.criterion {
        Criterion::Eopp => (0..y.len()).filter(|&i| y[i] == opts.eopp_label).collect(),
        Criterion::Dp | Criterion::Eo => (0..y.len()).collect(),
    }
}

/// How a sigmoid head's cross-entropy is recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BceForm {
    /// [`Graph::bce`] on probabilities: bounded, flat where the clamp binds.
    Clamped,
    /// [`Graph::bce_with_logits`]: unbounded, gradient never vanishes.
    Logits,
}

/// Records `BCE(f(z [| y]), s)` over the criterion-selected rows. `None` when
/// no row qualifies.
#[allow(clippy::too_many_arguments)]
pub fn record_adversary_loss(
    g: &mut Graph,
    adversary: &Mlp,
    params: &BoundParams,
    z: Var,
    y: &[u8],
    s: &[u8],
    opts: AdversaryOptions,
    form: BceForm,
) -> Result<Option<Var>> {
    let rows = adversary_rows(y, opts);
    if rows.is_empty() {
        return Ok(None);
    }
    let all_rows = rows.len() == y.len();
    let zs = if all_rows { z } else { g.select_rows(z, &rows)? };
    let input = match opts.criterion {
        Criterion::Eo => {
            let ycol = g.constant(labels_column(y));
            g.hcat(zs, ycol)?
        }
        Criterion::Dp | Criterion::Eopp => zs,
    };
    let target = labels_column(&rows.iter().map(|&i| s[i]).collect::<Vec<u8>>());
    let loss = match form {
        BceForm::Clamped => {
            let pred = adversary.forward(g, params, input)?;
            g.bce(pred, &target)?
        }
        BceForm::Logits => {
            let logits = adversary.forward_logits(g, params, input)?;
            g.bce_with_logits(logits, &target)?
        }
    };
    Ok(Some(loss))
}

/// Which parameter groups get gradients in a recorded level graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub upstream: bool,
    pub encoder: bool,
    pub decoder: bool,
    pub classifier: bool,
    pub adversary: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        upstream: true,
        encoder: true,
        decoder: true,
        classifier: true,
        adversary: true,
    };
}

/// Graph of one level's forward pass with handles to every loss term.
#[derive(Debug)]
pub struct LevelGraph {
    pub graph: Graph,
    pub upstream: Vec<BoundParams>,
    pub encoder: BoundParams,
    pub decoder: Option<BoundParams>,
    pub classifier: BoundParams,
    pub adversary: BoundParams,
    pub z: Var,
    pub rec: Option<Var>,
    pub class: Var,
    pub adv: Option<Var>,
}

impl LevelGraph {
    /// `α·rec + γ·class + adv_sign·β·adv`, skipping absent terms.
    pub fn combine(&mut self, w: LossWeights, adv_sign: f64) -> Result<Var> {
        let g = &mut self.graph;
        let mut total = g.scale(self.class, w.gamma);
        if let Some(rec) = self.rec {
            let r = g.scale(rec, w.alpha);
            total = g.add(total, r)?;
        }
        if let Some(adv) = self.adv {
            let a = g.scale(adv, adv_sign * w.beta);
            total = g.add(total, a)?;
        }
        Ok(total)
    }
}

/// Records the forward pass of `level` on `batch`. `upstream` encoders, if
/// any, are applied first (used when earlier levels are fine-tuned). The
/// decoder is only recorded when `with_reconstruction` is set.
#[allow(clippy::too_many_arguments)]
pub fn record_level(
    level: &Level,
    upstream: &[Mlp],
    batch: &LevelBatch,
    opts: AdversaryOptions,
    reconstruction: ReconstructionLoss,
    with_reconstruction: bool,
    trainable: Trainable,
) -> Result<LevelGraph> {
    let mut g = Graph::new();
    let upstream_params: Vec<BoundParams> = upstream
        .iter()
        .map(|m| m.bind(&mut g, trainable.upstream))
        .collect();
    let encoder = level.encoder.bind(&mut g, trainable.encoder);
    let decoder = with_reconstruction.then(|| level.decoder.bind(&mut g, trainable.decoder));
    let classifier = level.classifier.bind(&mut g, trainable.classifier);
    let adversary = level.adversary.bind(&mut g, trainable.adversary);

    let mut h = g.constant(batch.input.clone());
    for (m, p) in upstream.iter().zip(&upstream_params) {
        h = m.forward(&mut g, p, h)?;
    }
    let z_prev = h;
    let z = level.encoder.forward(&mut g, &encoder, z_prev)?;

    let rec = match &decoder {
        Some(dp) => {
            let recon = level.decoder.forward(&mut g, dp, z)?;
            // Written as mse(recon − z_prev, 0) so fine-tuned upstream encoders
            // also receive the gradient through the target side.
            let diff = g.sub(recon, z_prev)?;
            let zeros = Matrix::zeros(g.value(diff).rows(), g.value(diff).cols());
            let mse = g.mse(diff, &zeros)?;
            Some(match reconstruction {
                ReconstructionLoss::Mse => mse,
                ReconstructionLoss::Rmse => g.sqrt(mse),
            })
        }
        None => None,
    };

    let y_col = labels_column(&batch.y);
    let logits = level.classifier.forward_logits(&mut g, &classifier, z)?;
    let class = g.bce_with_logits(logits, &y_col)?;

    let adv = record_adversary_loss(
        &mut g,
        &level.adversary,
        &adversary,
        z,
        &batch.y,
        &batch.s,
        opts,
        BceForm::Clamped,
    )?;

    Ok(LevelGraph {
        graph: g,
        upstream: upstream_params,
        encoder,
        decoder,
        classifier,
        adversary,
        z,
        rec,
        class,
        adv,
    })
}

/// Value of the combined level objective and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelLoss {
    pub total: f64,
    pub rec: f64,
    /// `None` when the criterion selects no row of the batch.
    pub adv: Option<f64>,
    pub class: f64,
}

/// `α·L_rec + β·L_adv + γ·L_class` of `level` on one batch.
pub fn level_loss(
    level: &Level,
    batch: &LevelBatch,
    weights: LossWeights,
    opts: AdversaryOptions,
    reconstruction: ReconstructionLoss,
) -> Result<LevelLoss> {
    let mut lg = record_level(
        level,
        &[],
        batch,
        opts,
        reconstruction,
        true,
        Trainable {
            upstream: false,
            encoder: false,
            decoder: false,
            classifier: false,
            adversary: false,
        },
    )?;
    let total = lg.combine(weights, 1.0)?;
    let g = &lg.graph;
    Ok(LevelLoss {
        total: g.scalar(total),
        rec: g.scalar(lg.rec.expect("recorded with reconstruction")),
        adv: lg.adv.map(|v| g.scalar(v)),
        class: g.scalar(lg.class),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack::spec::LossWeights;

    fn toy_batch() -> LevelBatch {
        LevelBatch::new(
            Matrix::from_rows(&[
                [0.5, -1.0, 2.0],
                [1.5, 0.0, -0.5],
                [-0.3, 0.8, 0.1],
                [0.0, 0.2, 0.9],
            ]),
            vec![1, 0, 0, 1],
            vec![0, 1, 1, 0],
        )
        .unwrap()
    }

    fn toy_level(criterion: Criterion) -> Level {
        let spec = StackSpec::single_level(3, &[4], 2, criterion, LossWeights::default());
        build(&spec, 5).unwrap().remove(0)
    }

    #[test]
    fn build_is_seeded() {
        let spec = StackSpec::stacked(12, &[6, 3], Criterion::Dp, LossWeights::default());
        assert_eq!(build(&spec, 1).unwrap(), build(&spec, 1).unwrap());
        assert_ne!(build(&spec, 1).unwrap(), build(&spec, 2).unwrap());
    }

    #[test]
    fn build_rejects_bad_chain() {
        let mut spec = StackSpec::stacked(12, &[6, 3], Criterion::Dp, LossWeights::default());
        spec.levels[1].input_dim = 5;
        assert!(matches!(build(&spec, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn eopp_adversary_sees_only_selected_rows() {
        let opts = AdversaryOptions {
            criterion: Criterion::Eopp,
            eopp_label: 0,
        };
        assert_eq!(adversary_rows(&[1, 0, 0, 1], opts), vec![1, 2]);
        let opts = AdversaryOptions {
            criterion: Criterion::Eopp,
            eopp_label: 1,
        };
        assert_eq!(adversary_rows(&[1, 0, 0, 1], opts), vec![0, 3]);
    }

    #[test]
    fn empty_eopp_subset_skips_adversary() {
        let level = toy_level(Criterion::Eopp);
        let mut b = toy_batch();
        b.y = vec![1; 4];
        let opts = AdversaryOptions {
            criterion: Criterion::Eopp,
            eopp_label: 0,
        };
        let l = level_loss(
            &level,
            &b,
            LossWeights::new(1.0, 1.0, 1.0),
            opts,
            ReconstructionLoss::Mse,
        )
        .unwrap();
        assert_eq!(l.adv, None);
        assert!((l.total - (l.rec + l.class)).abs() < 1e-12);
    }

    #[test]
    fn total_is_weighted_sum_of_parts() {
        let level = toy_level(Criterion::Dp);
        let opts = AdversaryOptions {
            criterion: Criterion::Dp,
            eopp_label: 0,
        };
        let w = LossWeights::new(0.3, 2.0, 0.7);
        let l = level_loss(&level, &toy_batch(), w, opts, ReconstructionLoss::Mse).unwrap();
        let expect = 0.3 * l.rec + 2.0 * l.adv.unwrap() + 0.7 * l.class;
        assert!((l.total - expect).abs() < 1e-12);

        let r = level_loss(&level, &toy_batch(), w, opts, ReconstructionLoss::Rmse).unwrap();
        assert!((r.rec - l.rec.sqrt()).abs() < 1e-12);
    }
}
