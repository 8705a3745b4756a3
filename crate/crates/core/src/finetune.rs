//! End-to-end supervised fine-tuning over the simulated link, plus the clean
//! supervised training used by the hybrid baseline and the transfer stand-in.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use slscom_autograd::{Adam, ParamId, ParamStore, Tape, Tensor, Var};

use crate::checkpoint::{self, Manifest};
use crate::config::{ExperimentConfig, Mode};
use crate::data::{minibatches, Dataset};
use crate::error::{Error, Result};
use crate::eval::top1_accuracy;
use crate::link::{ChannelDraw, Link};
use crate::losses::{app_loss, ce_loss, mse_loss};
use crate::nn::{prefix, Fwd, Model};
use crate::pretrain::ablation_names;
use crate::seed::{derive_rng, Rng};

/// Largest batch pushed through the network during evaluation.
pub const EVAL_BATCH: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneStep {
    pub step: usize,
    pub l_app: f64,
    pub l_mse: f64,
    pub l_ce: f64,
    pub train_acc: f64,
}

pub struct FinetuneLosses<'t> {
    pub l_app: Var<'t>,
    pub l_mse: Var<'t>,
    pub l_ce: Var<'t>,
    pub probs: Var<'t>,
    pub noise_vars: Vec<f64>,
}

/// Full path for one batch: encoder (under `enc`), JSCC encoder, link, JSCC decoder
/// and task decoder (under `f`). The draw and, optionally, the noise variances are
/// held fixed so the result is a deterministic function of the weights.
#[allow(clippy::too_many_arguments)]
pub fn finetune_objective<'t>(
    enc: &Fwd<'t>,
    f: &Fwd<'t>,
    model: &Model,
    link: &Link,
    images: Var<'t>,
    targets: &Tensor,
    snr_db: f64,
    draw: &ChannelDraw,
    noise_vars: Option<&[f64]>,
    mu: f64,
) -> Result<FinetuneLosses<'t>> {
    let x = model.encoder.forward(enc, images);
    let z = model.jscc_encoder.forward(f, x);
    let rx = link.transmit(z, snr_db, draw, noise_vars)?;
    let x_hat = model.jscc_decoder.forward(f, rx.planes);
    let probs = model.task.forward(f, x_hat);
    let l_mse = mse_loss(x, x_hat)?;
    let l_ce = ce_loss(probs, targets)?;
    Ok(FinetuneLosses {
        l_app: app_loss(l_mse, l_ce, mu),
        l_mse,
        l_ce,
        probs,
        noise_vars: rx.noise_vars,
    })
}

/// Encoder straight into the task decoder, no channel.
pub fn clean_objective<'t>(enc: &Fwd<'t>, f: &Fwd<'t>, model: &Model, images: Var<'t>, targets: &Tensor) -> Result<(Var<'t>, Var<'t>)> {
    let x = model.encoder.forward(enc, images);
    let probs = model.task.forward(f, x);
    Ok((ce_loss(probs, targets)?, probs))
}

pub struct FinetuneRng<'a> {
    pub data: &'a mut Rng,
    pub channel: &'a mut Rng,
    pub noise: &'a mut Rng,
    /// Seed for validation draws; reused every epoch so epochs are compared on the same channels.
    pub val_seed: u64,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub trace: Vec<FinetuneStep>,
    pub val_acc: Vec<f64>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
}

/// Which parameters move and at what rate.
struct Routing {
    lr: f64,
    mu: f64,
    frozen: HashSet<ParamId>,
    task: Vec<ParamId>,
}

impl Routing {
    fn new(store: &ParamStore, cfg: &ExperimentConfig) -> Self {
        let frozen = if cfg.mode.freezes_encoder() {
            store.ids_with_prefix(prefix::ENCODER).into_iter().collect()
        } else {
            HashSet::new()
        };
        Self {
            lr: cfg.hyper.lr,
            mu: cfg.hyper.mu,
            frozen,
            task: store.ids_with_prefix(prefix::TASK),
        }
    }

    fn rate(&self, id: ParamId) -> Option<f64> {
        if self.frozen.contains(&id) {
            None
        } else if self.task.contains(&id) {
            Some(self.mu * self.lr)
        } else {
            Some(self.lr)
        }
    }
}

fn encoder_fwd<'a>(tape: &'a Tape, store: &'a ParamStore, cfg: &ExperimentConfig) -> Fwd<'a> {
    let mut f = if cfg.mode.freezes_encoder() {
        Fwd::eval(tape, store)
    } else {
        Fwd::new(tape, store, true, true)
    };
    f.momentum = cfg.bn_momentum;
    f
}

fn check_finite(values: &[f64], step: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NaNLoss { step })
    }
}

/// Fine-tune `model` on `labeled` indices. In the hybrid mode the channel is left out
/// of training and the encoder and task decoder learn from clean features. The
/// weights of the epoch with the best validation accuracy are restored at the end.
pub fn finetune_run(
    model: &mut Model,
    link: &Link,
    data: &Dataset,
    labeled: &[usize],
    val: &[usize],
    cfg: &ExperimentConfig,
    rng: FinetuneRng<'_>,
    checkpoint_dir: Option<&Path>,
) -> Result<FinetuneOutcome> {
    if labeled.is_empty() {
        return Err(Error::InfeasibleSplit("fine-tuning needs labeled samples".into()));
    }
    let h = &cfg.hyper;
    let routing = Routing::new(&model.store, cfg);
    let batch = h.batch_size.min(labeled.len());
    let mut adam = Adam::new(h.beta1, h.beta2);
    let mut trace = vec![];
    let mut val_acc = vec![];
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut step = 0;
    for epoch in 0..h.epochs_finetune {
        for idx in minibatches(labeled, batch, rng.data) {
            let images = data.batch(&idx);
            let targets = data.one_hot(&idx);
            let labels: Vec<usize> = idx.iter().map(|&i| data.label(i)).collect();
            let rec = if cfg.mode == Mode::Hybrid {
                clean_step(model, &mut adam, &routing, images, &targets, &labels, cfg, step)?
            } else {
                let draw = link.sample(idx.len(), rng.channel, rng.noise);
                channel_step(model, &mut adam, &routing, link, images, &targets, &labels, &draw, cfg, step)?
            };
            trace.push(rec);
            step += 1;
        }
        let acc = if val.is_empty() {
            0.0
        } else {
            let mut ch = derive_rng(rng.val_seed, "val/channel");
            let mut nz = derive_rng(rng.val_seed, "val/noise");
            if cfg.mode == Mode::Hybrid {
                evaluate_clean(model, data, val)?
            } else {
                evaluate(model, link, data, val, h.train_snr_db, &mut ch, &mut nz)?
            }
        };
        val_acc.push(acc);
        // Ties keep the later epoch; with no validation set this keeps the final weights.
        if best.as_ref().map_or(true, |(b, _, _)| acc >= *b) {
            best = Some((acc, epoch + 1, model.store.clone()));
        }
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                save_finetuned(&dir.join(format!("finetune_epoch{}.ckpt", epoch + 1)), model, cfg, BTreeMap::new())?;
            }
        }
    }
    let best_epoch = match best {
        Some((_, e, store)) => {
            model.store = store;
            e
        }
        None => 0,
    };
    if let Some(dir) = checkpoint_dir {
        save_finetuned(&dir.join("finetune.ckpt"), model, cfg, BTreeMap::new())?;
    }
    Ok(FinetuneOutcome {
        trace,
        val_acc,
        best_epoch,
    })
}

#[allow(clippy::too_many_arguments)]
fn channel_step(
    model: &mut Model,
    adam: &mut Adam,
    routing: &Routing,
    link: &Link,
    images: Tensor,
    targets: &Tensor,
    labels: &[usize],
    draw: &ChannelDraw,
    cfg: &ExperimentConfig,
    step: usize,
) -> Result<FinetuneStep> {
    let tape = Tape::new();
    let enc = encoder_fwd(&tape, &model.store, cfg);
    let mut f = Fwd::new(&tape, &model.store, true, true);
    f.momentum = cfg.bn_momentum;
    let l = finetune_objective(&enc, &f, model, link, tape.constant(images), targets, cfg.hyper.train_snr_db, draw, None, cfg.hyper.mu)?;
    let rec = FinetuneStep {
        step,
        l_app: l.l_app.item(),
        l_mse: l.l_mse.item(),
        l_ce: l.l_ce.item(),
        train_acc: top1_accuracy(&l.probs.value(), labels)?,
    };
    check_finite(&[rec.l_app, rec.l_mse, rec.l_ce], step)?;
    let mut grads = tape.backward(l.l_app);
    // The task decoder descends L_ce at rate mu*lr; its L_app gradient is mu times that.
    grads.scale_params(&routing.task, 1.0 / routing.mu);
    let updates = tape.take_updates();
    drop(tape);
    adam.step(&mut model.store, &grads, |id| routing.rate(id));
    model.apply_updates(updates);
    Ok(rec)
}

#[allow(clippy::too_many_arguments)]
fn clean_step(
    model: &mut Model,
    adam: &mut Adam,
    routing: &Routing,
    images: Tensor,
    targets: &Tensor,
    labels: &[usize],
    cfg: &ExperimentConfig,
    step: usize,
) -> Result<FinetuneStep> {
    let tape = Tape::new();
    let enc = encoder_fwd(&tape, &model.store, cfg);
    let mut f = Fwd::new(&tape, &model.store, true, true);
    f.momentum = cfg.bn_momentum;
    let (ce, probs) = clean_objective(&enc, &f, model, tape.constant(images), targets)?;
    let rec = FinetuneStep {
        step,
        l_app: ce.item(),
        l_mse: 0.0,
        l_ce: ce.item(),
        train_acc: top1_accuracy(&probs.value(), labels)?,
    };
    check_finite(&[rec.l_ce], step)?;
    let grads = tape.backward(ce);
    let updates = tape.take_updates();
    drop(tape);
    let lr = cfg.hyper.lr;
    adam.step(&mut model.store, &grads, |id| if routing.frozen.contains(&id) { None } else { Some(lr) });
    model.apply_updates(updates);
    Ok(rec)
}

/// Class probabilities for a batch sent over the link, in eval mode.
pub fn predict(model: &Model, link: &Link, images: Tensor, snr_db: f64, channel: &mut Rng, noise: &mut Rng) -> Result<Tensor> {
    let n = images.shape()[0];
    let draw = link.sample(n, channel, noise);
    let tape = Tape::new();
    let f = Fwd::eval(&tape, &model.store);
    let x = model.encoder.forward(&f, tape.constant(images));
    let z = model.jscc_encoder.forward(&f, x);
    let rx = link.transmit(z, snr_db, &draw, None)?;
    let x_hat = model.jscc_decoder.forward(&f, rx.planes);
    let probs = model.task.forward(&f, x_hat).value();
    Ok((*probs).clone())
}

/// Semantic features `[n, L_s]` in eval mode.
pub fn features(model: &Model, images: Tensor) -> Tensor {
    let tape = Tape::new();
    let f = Fwd::eval(&tape, &model.store);
    let x = model.encoder.forward(&f, tape.constant(images)).value();
    (*x).clone()
}

/// Task decoder on given features, eval mode.
pub fn classify(model: &Model, features: Tensor) -> Tensor {
    let tape = Tape::new();
    let f = Fwd::eval(&tape, &model.store);
    let y = model.task.forward(&f, tape.constant(features)).value();
    (*y).clone()
}

/// Top-1 over `indices` with fresh channel draws per frame.
pub fn evaluate(model: &Model, link: &Link, data: &Dataset, indices: &[usize], snr_db: f64, channel: &mut Rng, noise: &mut Rng) -> Result<f64> {
    let mut correct = 0.0;
    for chunk in indices.chunks(EVAL_BATCH) {
        let probs = predict(model, link, data.batch(chunk), snr_db, channel, noise)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| data.label(i)).collect();
        correct += top1_accuracy(&probs, &labels)? * chunk.len() as f64;
    }
    if indices.is_empty() {
        return Err(Error::LengthError("no samples to evaluate".into()));
    }
    Ok(correct / indices.len() as f64)
}

/// Top-1 of the encoder and task decoder without any channel.
pub fn evaluate_clean(model: &Model, data: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::LengthError("no samples to evaluate".into()));
    }
    let mut correct = 0.0;
    for chunk in indices.chunks(EVAL_BATCH) {
        let probs = classify(model, features(model, data.batch(chunk)));
        let labels: Vec<usize> = chunk.iter().map(|&i| data.label(i)).collect();
        correct += top1_accuracy(&probs, &labels)? * chunk.len() as f64;
    }
    Ok(correct / indices.len() as f64)
}

/// Supervised training of encoder and task decoder on clean images. Used to produce
/// stand-in transfer weights when no externally pre-trained encoder is available.
pub fn supervised_pretrain(model: &mut Model, data: &Dataset, indices: &[usize], cfg: &ExperimentConfig, rng: &mut Rng) -> Result<Vec<FinetuneStep>> {
    if indices.is_empty() {
        return Err(Error::InfeasibleSplit("supervised pre-training needs labeled samples".into()));
    }
    let mut local = cfg.clone();
    local.mode = Mode::Rscom;
    let routing = Routing::new(&model.store, &local);
    let batch = cfg.hyper.batch_size.min(indices.len());
    let mut adam = Adam::new(cfg.hyper.beta1, cfg.hyper.beta2);
    let mut trace = vec![];
    let mut step = 0;
    for _ in 0..cfg.hyper.epochs_pretrain {
        for idx in minibatches(indices, batch, rng) {
            let labels: Vec<usize> = idx.iter().map(|&i| data.label(i)).collect();
            trace.push(clean_step(model, &mut adam, &routing, data.batch(&idx), &data.one_hot(&idx), &labels, &local, step)?);
            step += 1;
        }
    }
    Ok(trace)
}

pub fn save_finetuned(path: &Path, model: &Model, cfg: &ExperimentConfig, extra: BTreeMap<String, f64>) -> Result<()> {
    checkpoint::save(
        path,
        &model.store,
        Manifest {
            components: [prefix::ENCODER, prefix::JSCC_ENCODER, prefix::JSCC_DECODER, prefix::TASK]
                .iter()
                .map(|p| p.to_string())
                .collect(),
            preset: cfg.preset.clone(),
            fingerprint: cfg.fingerprint(),
            mode: cfg.mode.to_string(),
            ablations: ablation_names(cfg),
            extra,
            entries: vec![],
        },
    )
}
