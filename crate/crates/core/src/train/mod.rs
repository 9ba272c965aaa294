//! Optimization of the hierarchical policy and the imitation baseline.
//!
//! One training cycle alternates a D1 minibatch (MSE through encoder and
//! spatial head) with a D2 minibatch (BCE through encoder and selection
//! head), so the encoder receives both gradients every cycle. Model
//! selection and early stopping track validation top-1 selection accuracy.

mod losses;
mod optim;

pub use losses::{
    categorical_loss, categorical_loss_grad, selection_loss, selection_loss_grad, spatial_loss,
    spatial_loss_grad, PROB_CLAMP,
};
pub use optim::Adam;

use ndarray::{Array1, Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{nearest_in_set, ImitationNet};
use crate::data::{
    build_d1, build_d2, build_imitation, split_kfold, D1Sample, D2Sample, DSample, Fold,
    SplitMode, TrajectoryRecord,
};
use crate::env::DesignImage;
use crate::eval::{evaluate_model, spatial_hit, EvalConfig, EvalModel, EvalReport};
use crate::nn::{softmax, DsnModel, Mode, SelectionNet};
use crate::sampler::SamplerConfig;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite ({value}) at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },
    #[error("training requires a non-empty dataset")]
    EmptyDataset,
    #[error("fold {fold} failed: {source}")]
    FoldFailed { fold: usize, source: Box<TrainError> },
}

/// Learning-rate schedule shapes; the paper-style default halves every 50
/// epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecaySchedule {
    Constant,
    StepHalf { every: usize },
    Exponential { gamma: f64 },
}

impl DecaySchedule {
    pub fn lr(&self, lr0: f64, epoch: usize) -> f64 {
        match *self {
            DecaySchedule::Constant => lr0,
            DecaySchedule::StepHalf { every } => lr0 * 0.5f64.powi((epoch / every.max(1)) as i32),
            DecaySchedule::Exponential { gamma } => lr0 * gamma.powi(epoch as i32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub decay: DecaySchedule,
    pub batch_size: usize,
    /// (w_mse, w_bce); both losses equally weighted by default.
    pub loss_weights: (f64, f64),
    pub seed: u64,
    pub n_folds: usize,
    pub val_fraction: f64,
    pub split_by_trajectory: bool,
    /// Ablation: categorical cross-entropy instead of element-wise BCE.
    pub categorical_selection_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.001,
            max_epochs: 200,
            patience: 20,
            decay: DecaySchedule::StepHalf { every: 50 },
            batch_size: 32,
            loss_weights: (1.0, 1.0),
            seed: 0,
            n_folds: 10,
            val_fraction: 0.10,
            split_by_trajectory: false,
            categorical_selection_loss: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub mse_loss: f64,
    pub bce_loss: f64,
    pub val_spatial_acc: f64,
    pub val_top1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Zero-based index of the epoch whose checkpoint is returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn to_text(&self, model: &str) -> String {
        let mut out = String::new();
        out.push_str("#train-report v1\n");
        out.push_str(&format!("model {model}\n"));
        out.push_str(&format!("best_epoch {}\n", self.best_epoch + 1));
        out.push_str(&format!("stopped_early {}\n", self.stopped_early));
        out.push_str("epoch mse bce val_spatial val_top1\n");
        for (i, e) in self.epochs.iter().enumerate() {
            out.push_str(&format!(
                "{} {:.6} {:.6} {:.4} {:.4}\n",
                i + 1,
                e.mse_loss,
                e.bce_loss,
                e.val_spatial_acc,
                e.val_top1
            ));
        }
        out
    }
}

fn mix_seed(base: u64, tag: u64) -> u64 {
    // splitmix64 round over base^tag
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn image_batch(images: &[&DesignImage]) -> Array4<f64> {
    let mut x = Array4::zeros((images.len(), 3, 128, 128));
    for (i, img) in images.iter().enumerate() {
        x.index_axis_mut(Axis(0), i).assign(&img.to_network_input());
    }
    x
}

fn stable_argmax(p: &Array1<f64>) -> usize {
    let mut best = 0;
    for i in 1..p.len() {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

/// Validation metrics for a DSN snapshot: spatial accuracy at the tight
/// threshold and top-1 selection accuracy (evaluation-mode batch norm).
fn validate_dsn(model: &mut DsnModel, val_d1: &[D1Sample], val_d2: &[D2Sample]) -> (f64, f64) {
    if val_d1.is_empty() {
        return (0.0, 0.0);
    }
    let mut spatial_hits = 0usize;
    let mut top1_hits = 0usize;
    for (c1, c2) in val_d1.chunks(32).zip(val_d2.chunks(32)) {
        let imgs: Vec<&DesignImage> = c1.iter().map(|s| s.image.as_ref()).collect();
        let (enc, _) = model.encoder.forward(&image_batch(&imgs));
        let (pred, _) = model.spatial.forward(&enc);
        for (i, s) in c1.iter().enumerate() {
            let p = [pred[(i, 0)], pred[(i, 1)], pred[(i, 2)], pred[(i, 3)]];
            if spatial_hit(&p, &s.target, 0.1) {
                spatial_hits += 1;
            }
        }
        let feats: Vec<_> = c2
            .iter()
            .map(|s| crate::nn::ActionFeatures::from_actions(&s.action_set.actions))
            .collect();
        let (probs, _) = model.selection.forward_sets(&enc, &feats, Mode::Eval);
        for (p, s) in probs.iter().zip(c2) {
            if stable_argmax(p) == s.target_index {
                top1_hits += 1;
            }
        }
    }
    (spatial_hits as f64 / val_d1.len() as f64, top1_hits as f64 / val_d2.len() as f64)
}

/// Train the hierarchical policy with alternating D1/D2 minibatches.
///
/// Returns the checkpoint of the best validation top-1 epoch together with
/// the per-epoch report.
pub fn train_dsn(
    train_d1: &[D1Sample],
    train_d2: &[D2Sample],
    val_d1: &[D1Sample],
    val_d2: &[D2Sample],
    cfg: &TrainConfig,
) -> Result<(DsnModel, TrainReport), TrainError> {
    if train_d1.is_empty() || train_d2.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (w_mse, w_bce) = cfg.loss_weights;
    let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2));
    let mut model = DsnModel::new(&mut init_rng);
    let mut opt_enc = Adam::new(&mut model.encoder);
    let mut opt_spa = Adam::new(&mut model.spatial);
    let mut opt_sel = Adam::new(&mut model.selection);

    let mut report = TrainReport { epochs: Vec::new(), best_epoch: 0, stopped_early: false };
    let mut best_top1 = f64::NEG_INFINITY;
    let mut best_model: Option<DsnModel> = None;

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.decay.lr(cfg.lr0, epoch);
        let mut order1: Vec<usize> = (0..train_d1.len()).collect();
        let mut order2: Vec<usize> = (0..train_d2.len()).collect();
        order1.shuffle(&mut shuffle_rng);
        order2.shuffle(&mut shuffle_rng);

        let n_cycles = order1.len().min(order2.len()).div_ceil(cfg.batch_size);
        let mut mse_sum = 0.0;
        let mut bce_sum = 0.0;
        for cycle in 0..n_cycles {
            let lo = cycle * cfg.batch_size;

            // D1: spatial regression
            let idx1 = &order1[lo..(lo + cfg.batch_size).min(order1.len())];
            let imgs: Vec<&DesignImage> =
                idx1.iter().map(|&i| train_d1[i].image.as_ref()).collect();
            let (enc, ectx) = model.encoder.forward(&image_batch(&imgs));
            let (pred, sctx) = model.spatial.forward(&enc);
            let b = idx1.len() as f64;
            let mut dpred = Array2::zeros((idx1.len(), 4));
            let mut batch_mse = 0.0;
            for (row, &i) in idx1.iter().enumerate() {
                let p = [pred[(row, 0)], pred[(row, 1)], pred[(row, 2)], pred[(row, 3)]];
                batch_mse += spatial_loss(&p, &train_d1[i].target);
                let g = spatial_loss_grad(&p, &train_d1[i].target);
                for k in 0..4 {
                    dpred[(row, k)] = w_mse * g[k] / b;
                }
            }
            batch_mse = w_mse * batch_mse / b;
            if !batch_mse.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step: cycle, value: batch_mse });
            }
            mse_sum += batch_mse;
            let denc = model.spatial.backward(&sctx, &dpred);
            model.encoder.backward(&ectx, &denc);
            opt_spa.step(&mut model.spatial, lr);
            opt_enc.step(&mut model.encoder, lr);

            // D2: selection classification
            let idx2 = &order2[lo..(lo + cfg.batch_size).min(order2.len())];
            let imgs: Vec<&DesignImage> =
                idx2.iter().map(|&i| train_d2[i].image.as_ref()).collect();
            let (enc, ectx) = model.encoder.forward(&image_batch(&imgs));
            let feats: Vec<_> = idx2
                .iter()
                .map(|&i| {
                    crate::nn::ActionFeatures::from_actions(&train_d2[i].action_set.actions)
                })
                .collect();
            let (probs, selctx) = model.selection.forward_sets(&enc, &feats, Mode::train());
            let b = idx2.len() as f64;
            let mut dprobs = Vec::with_capacity(idx2.len());
            let mut batch_bce = 0.0;
            for (row, &i) in idx2.iter().enumerate() {
                let target = train_d2[i].target_index;
                let (loss, grad) = if cfg.categorical_selection_loss {
                    (categorical_loss(&probs[row], target), categorical_loss_grad(&probs[row], target))
                } else {
                    (selection_loss(&probs[row], target), selection_loss_grad(&probs[row], target))
                };
                batch_bce += loss;
                dprobs.push(grad * (w_bce / b));
            }
            batch_bce = w_bce * batch_bce / b;
            if !batch_bce.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step: cycle, value: batch_bce });
            }
            bce_sum += batch_bce;
            let denc = model.selection.backward(&selctx, &dprobs);
            model.encoder.backward(&ectx, &denc);
            opt_sel.step(&mut model.selection, lr);
            opt_enc.step(&mut model.encoder, lr);
        }

        let (val_spatial_acc, val_top1) = validate_dsn(&mut model, val_d1, val_d2);
        report.epochs.push(EpochStats {
            mse_loss: mse_sum / n_cycles as f64,
            bce_loss: bce_sum / n_cycles as f64,
            val_spatial_acc,
            val_top1,
        });
        if val_top1 > best_top1 {
            best_top1 = val_top1;
            report.best_epoch = epoch;
            best_model = Some(model.clone());
        }
        if epoch - report.best_epoch >= cfg.patience {
            report.stopped_early = true;
            break;
        }
    }
    Ok((best_model.unwrap_or(model), report))
}

/// Validation for the baseline: spatial accuracy from the parameter head and
/// top-1 via nearest-feasible projection onto the validation D2 sets.
fn validate_imitation(
    net: &ImitationNet,
    val_d: &[DSample],
    val_d2: &[D2Sample],
) -> (f64, f64) {
    if val_d.is_empty() {
        return (0.0, 0.0);
    }
    let mut spatial_hits = 0usize;
    let mut top1_hits = 0usize;
    for (cd, c2) in val_d.chunks(32).zip(val_d2.chunks(32)) {
        let imgs: Vec<&DesignImage> = cd.iter().map(|s| s.image.as_ref()).collect();
        let (logits, params, _) = net.forward(&image_batch(&imgs));
        for (i, (s, s2)) in cd.iter().zip(c2).enumerate() {
            let p = [params[(i, 0)], params[(i, 1)], params[(i, 2)], params[(i, 3)]];
            if spatial_hit(&p, &s.params, 0.1) {
                spatial_hits += 1;
            }
            let truth = s2.action_set.actions[s2.target_index];
            let picked = nearest_in_set(&logits.row(i).to_owned(), &p, &s2.action_set);
            if picked == truth {
                top1_hits += 1;
            }
        }
    }
    (spatial_hits as f64 / val_d.len() as f64, top1_hits as f64 / val_d.len() as f64)
}

/// Train the non-hierarchical baseline on the direct dataset with the same
/// optimizer, schedule, and early-stopping protocol as the DSN.
pub fn train_imitation(
    train_d: &[DSample],
    val_d: &[DSample],
    val_d2: &[D2Sample],
    cfg: &TrainConfig,
) -> Result<(ImitationNet, TrainReport), TrainError> {
    if train_d.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (w_mse, w_bce) = cfg.loss_weights;
    let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 3));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 4));
    let mut net = ImitationNet::new(&mut init_rng);
    let mut opt = Adam::new(&mut net);

    let mut report = TrainReport { epochs: Vec::new(), best_epoch: 0, stopped_early: false };
    let mut best_top1 = f64::NEG_INFINITY;
    let mut best_net: Option<ImitationNet> = None;

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.decay.lr(cfg.lr0, epoch);
        let mut order: Vec<usize> = (0..train_d.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut mse_sum = 0.0;
        let mut bce_sum = 0.0;
        let n_batches = order.len().div_ceil(cfg.batch_size);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let imgs: Vec<&DesignImage> =
                batch.iter().map(|&i| train_d[i].image.as_ref()).collect();
            let x = image_batch(&imgs);
            let (logits, params, ctx) = net.forward(&x);
            let b = batch.len() as f64;
            let mut dlogits = Array2::zeros((batch.len(), 3));
            let mut dparams = Array2::zeros((batch.len(), 4));
            let mut batch_mse = 0.0;
            let mut batch_bce = 0.0;
            for (row, &i) in batch.iter().enumerate() {
                let sample = &train_d[i];
                let p = [params[(row, 0)], params[(row, 1)], params[(row, 2)], params[(row, 3)]];
                batch_mse += spatial_loss(&p, &sample.params);
                let g = spatial_loss_grad(&p, &sample.params);
                for k in 0..4 {
                    dparams[(row, k)] = w_mse * g[k] / b;
                }
                let lrow: Vec<f64> = logits.row(row).to_vec();
                let probs = softmax(&lrow);
                batch_bce += selection_loss(&probs, sample.label_index);
                let dp = selection_loss_grad(&probs, sample.label_index);
                // softmax backward
                let dot: f64 = probs.iter().zip(dp.iter()).map(|(&a, &g)| a * g).sum();
                for k in 0..3 {
                    dlogits[(row, k)] = w_bce * probs[k] * (dp[k] - dot) / b;
                }
            }
            batch_mse = w_mse * batch_mse / b;
            batch_bce = w_bce * batch_bce / b;
            let total = batch_mse + batch_bce;
            if !total.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step, value: total });
            }
            mse_sum += batch_mse;
            bce_sum += batch_bce;
            net.backward(&ctx, &dlogits, &dparams);
            opt.step(&mut net, lr);
        }

        let (val_spatial_acc, val_top1) = validate_imitation(&net, val_d, val_d2);
        report.epochs.push(EpochStats {
            mse_loss: mse_sum / n_batches as f64,
            bce_loss: bce_sum / n_batches as f64,
            val_spatial_acc,
            val_top1,
        });
        if val_top1 > best_top1 {
            best_top1 = val_top1;
            report.best_epoch = epoch;
            best_net = Some(net.clone());
        }
        if epoch - report.best_epoch >= cfg.patience {
            report.stopped_early = true;
            break;
        }
    }
    Ok((best_net.unwrap_or(net), report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Dsn,
    Imitation,
}

#[derive(Debug)]
pub enum TrainedModel {
    Dsn(Box<DsnModel>),
    Imitation(Box<ImitationNet>),
}

#[derive(Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub train_report: TrainReport,
    pub eval: EvalReport,
    pub model: TrainedModel,
}

/// Mean and first standard error of a per-fold metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

pub fn mean_stderr(values: &[f64]) -> MeanStderr {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return MeanStderr { mean, stderr: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    MeanStderr { mean, stderr: (var / n).sqrt() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvAggregate {
    pub mse: MeanStderr,
    pub bce: MeanStderr,
    pub spatial_tight: MeanStderr,
    pub top1: MeanStderr,
}

#[derive(Debug)]
pub struct CvOutcome {
    pub folds: Vec<FoldResult>,
    pub aggregate: CvAggregate,
}

impl CvOutcome {
    pub fn summary_table(&self, model: &str) -> String {
        let a = &self.aggregate;
        let mut out = String::new();
        out.push_str("model mse bce spatial@0.1 top1\n");
        out.push_str(&format!(
            "{model} {:.4}±{:.4} {:.4}±{:.4} {:.2}±{:.2} {:.2}±{:.2}\n",
            a.mse.mean,
            a.mse.stderr,
            a.bce.mean,
            a.bce.stderr,
            a.spatial_tight.mean,
            a.spatial_tight.stderr,
            a.top1.mean,
            a.top1.stderr
        ));
        out
    }
}

fn pick<T: Clone>(samples: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

/// K-fold cross validation: train on each fold, evaluate on its test split,
/// aggregate as mean ± first standard error.
pub fn cross_validate(
    records: &[TrajectoryRecord],
    kind: ModelKind,
    cfg: &TrainConfig,
    sampler_cfg: &SamplerConfig,
    eval_cfg: &EvalConfig,
) -> Result<CvOutcome, TrainError> {
    if records.len() < cfg.n_folds {
        return Err(TrainError::EmptyDataset);
    }
    let mode = if cfg.split_by_trajectory { SplitMode::ByTrajectory } else { SplitMode::ByRecord };
    let mut split_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 10));
    let folds: Vec<Fold> = split_kfold(records, cfg.n_folds, cfg.val_fraction, mode, &mut split_rng);

    let d1_all = build_d1(records);
    let mut d2_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 11));
    let d2_all = build_d2(records, sampler_cfg, &mut d2_rng);
    let d_all = build_imitation(records);

    let mut outcomes = Vec::with_capacity(folds.len());
    for (fi, fold) in folds.iter().enumerate() {
        let fold_cfg = TrainConfig { seed: mix_seed(cfg.seed, 100 + fi as u64), ..*cfg };
        let d2_test = pick(&d2_all, &fold.test);
        let wrap = |source: TrainError| TrainError::FoldFailed { fold: fi, source: Box::new(source) };
        let (model, train_report, eval) = match kind {
            ModelKind::Dsn => {
                let (mut model, report) = train_dsn(
                    &pick(&d1_all, &fold.train),
                    &pick(&d2_all, &fold.train),
                    &pick(&d1_all, &fold.val),
                    &pick(&d2_all, &fold.val),
                    &fold_cfg,
                )
                .map_err(wrap)?;
                let eval = evaluate_model(EvalModel::Dsn(&mut model), &d2_test, eval_cfg);
                (TrainedModel::Dsn(Box::new(model)), report, eval)
            }
            ModelKind::Imitation => {
                let (net, report) = train_imitation(
                    &pick(&d_all, &fold.train),
                    &pick(&d_all, &fold.val),
                    &pick(&d2_all, &fold.val),
                    &fold_cfg,
                )
                .map_err(wrap)?;
                let eval = evaluate_model(EvalModel::Imitation(&net), &d2_test, eval_cfg);
                (TrainedModel::Imitation(Box::new(net)), report, eval)
            }
        };
        outcomes.push(FoldResult { fold: fi, train_report, eval, model });
    }

    let collect = |f: &dyn Fn(&EvalReport) -> f64| -> Vec<f64> {
        outcomes.iter().map(|o| f(&o.eval)).collect()
    };
    let aggregate = CvAggregate {
        mse: mean_stderr(&collect(&|e| e.mse)),
        bce: mean_stderr(&collect(&|e| e.bce)),
        spatial_tight: mean_stderr(&collect(&|e| e.spatial_accuracy_at(e.spatial_thresholds[0]))),
        top1: mean_stderr(&collect(&|e| e.topk_accuracy(1))),
    };
    Ok(CvOutcome { folds: outcomes, aggregate })
}

/// Train-mode forward/backward helpers shared by the gradient-check suite.
pub fn selection_training_loss(
    net: &mut SelectionNet,
    encs: &Array2<f64>,
    feats: &[crate::nn::ActionFeatures],
    targets: &[usize],
) -> f64 {
    let (probs, _) =
        net.forward_sets(encs, feats, Mode::Train { update_running: false });
    probs.iter().zip(targets).map(|(p, &t)| selection_loss(p, t)).sum::<f64>()
        / targets.len() as f64
}
