//! Local self-supervised pre-training of the semantic encoder (and projection).

use std::path::Path;

use slscom_autograd::{Adam, Tape, Tensor, Var};

use crate::augment::construct_views;
use crate::checkpoint::{self, Manifest};
use crate::config::ExperimentConfig;
use crate::data::{minibatches, Dataset};
use crate::error::{Error, Result};
use crate::losses::{infonce_loss, pretrain_loss, reconstruction_loss};
use crate::nn::{prefix, Fwd, Model};
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainStep {
    pub step: usize,
    pub l_pre: f64,
    pub l_c: f64,
    pub l_r: f64,
}

/// The three pre-training losses on one batch of samples and their views.
pub struct PretrainLosses<'t> {
    pub l_pre: Var<'t>,
    pub l_c: Var<'t>,
    pub l_r: Var<'t>,
}

/// Build `L_pre` for a batch. Both views pass through the encoder separately; the
/// projection (shared between views) feeds InfoNCE, or, without it, the unit-normalized
/// semantic vectors do.
pub fn pretrain_objective<'t>(f: &Fwd<'t>, model: &Model, samples: Var<'t>, views: Var<'t>, lambda: f64) -> Result<PretrainLosses<'t>> {
    let x = model.encoder.forward(f, samples);
    let x_r = model.encoder.forward(f, views);
    let (a, b) = match &model.projection {
        Some(p) => (p.forward(f, x), p.forward(f, x_r)),
        None => (x.row_normalize(1.0), x_r.row_normalize(1.0)),
    };
    let l_c = infonce_loss(a, b)?;
    let l_r = reconstruction_loss(x, x_r)?;
    Ok(PretrainLosses {
        l_pre: pretrain_loss(l_c, l_r, lambda),
        l_c,
        l_r,
    })
}

pub struct PretrainRng<'a> {
    pub data: &'a mut Rng,
    pub augment: &'a mut Rng,
}

/// Run pre-training on `unlabeled` indices of `data`. Encoder and projection
/// weights both descend `L_pre` with Adam. Returns the per-step loss trace; the
/// caller keeps only the encoder.
pub fn pretrain_run(
    model: &mut Model,
    data: &Dataset,
    unlabeled: &[usize],
    cfg: &ExperimentConfig,
    rng: PretrainRng<'_>,
    checkpoint_dir: Option<&Path>,
) -> Result<Vec<PretrainStep>> {
    if unlabeled.is_empty() {
        return Err(Error::InfeasibleSplit("pre-training needs unlabeled samples".into()));
    }
    let h = &cfg.hyper;
    let lambda = cfg.effective_lambda();
    let policy = cfg.effective_augment();
    let batch = h.batch_size.min(unlabeled.len());
    let mut adam = Adam::new(h.beta1, h.beta2);
    let mut trace = vec![];
    let mut step = 0;
    for epoch in 0..h.epochs_pretrain {
        for idx in minibatches(unlabeled, batch, rng.data) {
            let samples = data.batch(&idx);
            let views = construct_views(&samples, &policy, rng.augment);
            let rec = pretrain_step(model, &mut adam, samples, views, lambda, cfg)?;
            if !(rec.0.is_finite() && rec.1.is_finite() && rec.2.is_finite()) {
                return Err(Error::NaNLoss { step });
            }
            trace.push(PretrainStep {
                step,
                l_pre: rec.0,
                l_c: rec.1,
                l_r: rec.2,
            });
            step += 1;
        }
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                save_encoder(&dir.join(format!("pretrain_epoch{}.ckpt", epoch + 1)), model, cfg)?;
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        save_encoder(&dir.join("pretrain_encoder.ckpt"), model, cfg)?;
    }
    Ok(trace)
}

fn pretrain_step(model: &mut Model, adam: &mut Adam, samples: Tensor, views: Tensor, lambda: f64, cfg: &ExperimentConfig) -> Result<(f64, f64, f64)> {
    let tape = Tape::new();
    let mut f = Fwd::new(&tape, &model.store, true, true);
    f.momentum = cfg.bn_momentum;
    let losses = pretrain_objective(&f, model, tape.constant(samples), tape.constant(views), lambda)?;
    let out = (losses.l_pre.item(), losses.l_c.item(), losses.l_r.item());
    let grads = tape.backward(losses.l_pre);
    let updates = tape.take_updates();
    drop(tape);
    let lr = cfg.hyper.lr;
    adam.step(&mut model.store, &grads, |_| Some(lr));
    model.apply_updates(updates);
    Ok(out)
}

pub fn save_encoder(path: &Path, model: &Model, cfg: &ExperimentConfig) -> Result<()> {
    let extra = Default::default();
    checkpoint::save(
        path,
        &model.store,
        Manifest {
            components: vec![prefix::ENCODER.into()],
            preset: cfg.preset.clone(),
            fingerprint: cfg.fingerprint(),
            mode: cfg.mode.to_string(),
            ablations: ablation_names(cfg),
            extra,
            entries: vec![],
        },
    )
}

pub fn ablation_names(cfg: &ExperimentConfig) -> Vec<String> {
    let a = &cfg.ablations;
    [
        (a.no_reconstruction, "no_reconstruction"),
        (a.no_aux_projection, "no_aux_projection"),
        (a.no_color_transforms, "no_color_transforms"),
    ]
    .iter()
    .filter(|(on, _)| *on)
    .map(|(_, n)| n.to_string())
    .collect()
}
