//! Mini-batch training, evaluation and the focal-loss γ sweep.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::EvalReport;
use super::optim::{Optimizer, OptimizerKind};
use crate::error::{Error, Result};
use crate::hsi::{extract_at, extract_patches, HsiScene, PatchBatch, Pixel, SplitPlan};
use crate::loss::{alpha_from_frequency, loss_multiclass, AlphaMode, LossConfig, LossKind};
use crate::network::{backward, forward, init_parameters, predict, NetworkGraph, ParameterStore};
use crate::ops::{softmax, Mode};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Zero is accepted and leaves trainable parameters untouched.
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub loss: LossConfig,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    /// Kernels reduce in a fixed order, so runs are bit-identical either
    /// way; the flag is carried for run manifests.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            loss: LossConfig {
                alpha_mode: AlphaMode::InverseFrequency,
                ..LossConfig::focal(vec![1.0], 2.0)
            },
            seed: 0,
            patience: None,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be positive".into()));
        }
        self.optimizer.validate()?;
        self.loss.validate()
    }
}

/// Turns an inverse-frequency loss into a fixed one for the given
/// per-class training counts. Cross entropy ignores α.
pub fn resolve_loss(cfg: &LossConfig, train_counts: &[usize]) -> Result<LossConfig> {
    if cfg.alpha_mode == AlphaMode::Fixed || cfg.kind == LossKind::Cel {
        return Ok(cfg.clone());
    }
    Ok(LossConfig {
        alpha: alpha_from_frequency(train_counts)?,
        alpha_mode: AlphaMode::Fixed,
        ..cfg.clone()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_oa: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based).
    pub selected_epoch: usize,
}

impl History {
    /// `epoch,trainLoss,valOA`; `valOA` is empty without a validation split.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,trainLoss,valOA\n");
        for r in &self.epochs {
            let val = r.val_oa.map(|v| v.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{}", r.epoch, r.train_loss, val).unwrap();
        }
        s
    }
}

fn gather<T: Real>(all: &PatchBatch<T>, idx: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
    let shape = all.tensors.shape();
    let vol: usize = shape[1..].iter().product();
    let src = all.tensors.data();
    let mut data = Vec::with_capacity(idx.len() * vol);
    for &i in idx {
        data.extend_from_slice(&src[i * vol..(i + 1) * vol]);
    }
    let mut s = shape.to_vec();
    s[0] = idx.len();
    Ok((Tensor::from_vec(&s, data)?, idx.iter().map(|&i| all.labels[i]).collect()))
}

fn diverged(e: Error, epoch: usize) -> Error {
    fn non_finite(e: &Error) -> bool {
        match e {
            Error::NonFinite(_) => true,
            Error::Layer { source, .. } => non_finite(source),
            _ => false,
        }
    }
    if non_finite(&e) {
        Error::Diverged { epoch }
    } else {
        e
    }
}

/// Trains `params` in place on the plan's training pixels.
///
/// With a validation split the parameters of the best validation-OA epoch
/// are kept; otherwise those of the last epoch. A non-finite loss restores
/// the parameters from the end of the previous epoch and returns
/// [`Error::Diverged`].
pub fn train<T: Real>(
    graph: &NetworkGraph,
    params: &mut ParameterStore<T>,
    scene: &HsiScene,
    plan: &SplitPlan,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    let k = graph.config.num_classes;
    if scene.bands != graph.config.bands {
        return Err(Error::Shape(format!(
            "scene has {} bands, network expects {}",
            scene.bands, graph.config.bands
        )));
    }
    if scene.num_classes > k {
        return Err(Error::Config(format!(
            "scene has {} classes, network outputs {k}",
            scene.num_classes
        )));
    }
    if plan.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let patch = graph.config.patch;
    let data: PatchBatch<T> = extract_patches(scene, &plan.train, patch)?;
    let mut counts = vec![0usize; k];
    for &c in &data.labels {
        counts[c] += 1;
    }
    let loss_cfg = resolve_loss(&cfg.loss, &counts)?;

    let mut opt = Optimizer::new(cfg.optimizer);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, ParameterStore<T>)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        let snapshot = params.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut weighted = 0.0;
        let epoch_result = (|| -> Result<()> {
            for idx in order.chunks(cfg.batch_size) {
                let (x, y) = gather(&data, idx)?;
                let pass = forward(graph, params, &x, Mode::Train)?;
                let out = loss_multiclass(pass.logits(), &y, &loss_cfg)?;
                let grads = backward(graph, params, &pass, &out.grad)?;
                opt.step(params, &grads.params, cfg.learning_rate)?;
                weighted += out.loss * idx.len() as f64;
            }
            Ok(())
        })();
        if let Err(e) = epoch_result {
            *params = snapshot;
            return Err(diverged(e, epoch));
        }
        let train_loss = weighted / data.len() as f64;
        if !train_loss.is_finite() || !params.tensors.values().all(|t| t.all_finite()) {
            *params = snapshot;
            return Err(Error::Diverged { epoch });
        }

        let val_oa = if plan.val.is_empty() {
            None
        } else {
            Some(evaluate(graph, params, scene, &plan.val, cfg.batch_size.max(64))?.oa)
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_oa,
        });

        match val_oa {
            None => history.selected_epoch = epoch,
            Some(oa) => {
                if best.as_ref().is_none_or(|(b, _)| oa > *b) {
                    best = Some((oa, params.clone()));
                    history.selected_epoch = epoch;
                    since_best = 0;
                } else {
                    since_best += 1;
                }
                if cfg.patience.is_some_and(|p| since_best >= p) {
                    break;
                }
            }
        }
    }
    if let Some((_, p)) = best {
        *params = p;
    }
    Ok(history)
}

/// Argmax class index for each `(row, col)`.
pub fn predict_pixels<T: Real>(
    graph: &NetworkGraph,
    params: &ParameterStore<T>,
    scene: &HsiScene,
    coords: &[(usize, usize)],
    batch_size: usize,
) -> Result<Vec<usize>> {
    if scene.bands != graph.config.bands {
        return Err(Error::Shape(format!(
            "scene has {} bands, network expects {}",
            scene.bands, graph.config.bands
        )));
    }
    let mut out = Vec::with_capacity(coords.len());
    for chunk in coords.chunks(batch_size.max(1)) {
        let batch: Tensor<T> = extract_at(scene, chunk, graph.config.patch)?;
        let logits = predict(graph, params, &batch)?;
        let probs = softmax(&logits)?;
        let k = graph.config.num_classes;
        for row in probs.data().chunks(k) {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (j, &v)| if v > row[b] { j } else { b });
            out.push(best);
        }
    }
    Ok(out)
}

pub fn evaluate<T: Real>(
    graph: &NetworkGraph,
    params: &ParameterStore<T>,
    scene: &HsiScene,
    pixels: &[Pixel],
    batch_size: usize,
) -> Result<EvalReport> {
    if pixels.is_empty() {
        return Err(Error::Config("cannot evaluate an empty set".into()));
    }
    let coords: Vec<(usize, usize)> = pixels.iter().map(|p| (p.row, p.col)).collect();
    let pred = predict_pixels(graph, params, scene, &coords, batch_size)?;
    let truth: Vec<usize> = pixels.iter().map(|p| p.label as usize - 1).collect();
    EvalReport::from_predictions(&truth, &pred, graph.config.num_classes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub report: EvalReport,
    pub history: History,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("gamma,oa,aa,kappa\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.gamma, r.report.oa, r.report.aa, r.report.kappa).unwrap();
    }
    s
}

/// One full train + test evaluation per γ with focal loss. Everything else,
/// including the initial parameters drawn from `base.seed`, is held fixed.
pub fn gamma_sweep<T: Real>(
    gammas: &[f64],
    base: &TrainConfig,
    graph: &NetworkGraph,
    scene: &HsiScene,
    plan: &SplitPlan,
) -> Result<Vec<SweepRow>> {
    if gammas.is_empty() {
        return Err(Error::Config("γ grid is empty".into()));
    }
    if plan.test.is_empty() {
        return Err(Error::Config("test split is empty".into()));
    }
    gammas
        .iter()
        .map(|&gamma| {
            let mut cfg = base.clone();
            cfg.loss.kind = LossKind::Focal;
            cfg.loss.gamma = gamma;
            let mut params = init_parameters::<T>(graph, base.seed);
            let history = train(graph, &mut params, scene, plan, &cfg)?;
            let report = evaluate(graph, &params, scene, &plan.test, 256)?;
            Ok(SweepRow {
                gamma,
                report,
                history,
            })
        })
        .collect()
}
