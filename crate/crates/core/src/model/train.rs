//! Adam training loop for the attention model.
//!
//! Determinism contract: given identical seeds, configs, and data, two runs
//! produce bit-identical parameters and loss curves regardless of thread
//! count. Per-sample gradients are computed in parallel over fixed
//! index-ordered chunks, collected in order, and reduced sequentially, so the
//! floating-point summation order never changes.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::knn::Patch;
use crate::model::{bind, forward_var, patch_to_tensor, sine_loss_var, ModelConfig, ModelParams};
use crate::{Error, Result};

/// Samples per parallel work unit during batch gradient accumulation.
const GRAD_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Patches per optimization step.
    pub batch_size: usize,
    pub lr: f64,
    /// The learning rate is divided by this factor at each decay epoch.
    pub lr_decay_factor: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Seed for epoch shuffling.
    pub seed: u64,
    /// Keeps the temperature at its initial value by zeroing its gradient.
    pub freeze_temperature: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 900,
            batch_size: 12000,
            lr: 5e-4,
            lr_decay_factor: 10.0,
            lr_decay_epochs: vec![400, 800],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            freeze_temperature: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.lr_decay_factor > 0.0) {
            return Err(Error::InvalidConfig("lr_decay_factor must be positive".into()));
        }
        Ok(())
    }
}

/// Learning rate in force at a 0-based epoch: divided by the decay factor once
/// per decay epoch already reached.
pub fn effective_lr(cfg: &TrainConfig, epoch: usize) -> f64 {
    let decays = cfg
        .lr_decay_epochs
        .iter()
        .filter(|&&d| epoch >= d)
        .count() as i32;
    cfg.lr / cfg.lr_decay_factor.powi(decays)
}

/// First and second Adam moments, one pair per parameter tensor in canonical
/// order.
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

fn adam_update_tensor(
    p: &mut Tensor,
    g: &Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
    step: u64,
    lr: f64,
    cfg: &TrainConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for ((pe, &ge), (me, ve)) in p
        .data_mut()
        .iter_mut()
        .zip(g.data())
        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
    {
        *me = cfg.beta1 * *me + (1.0 - cfg.beta1) * ge;
        *ve = cfg.beta2 * *ve + (1.0 - cfg.beta2) * ge * ge;
        let m_hat = *me / bc1;
        let v_hat = *ve / bc2;
        *pe -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// One bias-corrected Adam update over every parameter tensor. No weight
/// decay.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut tensors = params.tensors_mut();
    assert_eq!(tensors.len(), grads.len(), "gradient count mismatch");
    for g in grads {
        if !g.is_finite() {
            return Err(Error::Diverged("non-finite gradient".into()));
        }
    }
    state.step += 1;
    for (i, p) in tensors.iter_mut().enumerate() {
        adam_update_tensor(
            p,
            &grads[i],
            &mut state.m[i],
            &mut state.v[i],
            state.step,
            lr,
            cfg,
        );
    }
    Ok(())
}

/// Mean loss and mean parameter gradients over one batch of sample indices.
fn batch_gradients(
    dataset: &[(Patch, Vector3<f64>)],
    batch: &[usize],
    params: &ModelParams,
) -> Result<(f64, Vec<Tensor>)> {
    let partials: Vec<Result<(f64, Vec<Tensor>)>> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut sum_loss = 0.0;
            let mut sum_grads: Option<Vec<Tensor>> = None;
            for &si in chunk {
                let (patch, gt) = &dataset[si];
                let (loss, grads) = sample_gradients(patch, gt, params)?;
                sum_loss += loss;
                match &mut sum_grads {
                    None => sum_grads = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (ae, ge) in a.data_mut().iter_mut().zip(g.data()) {
                                *ae += ge;
                            }
                        }
                    }
                }
            }
            Ok((sum_loss, sum_grads.expect("non-empty chunk")))
        })
        .collect();

    let mut total_loss = 0.0;
    let mut total: Option<Vec<Tensor>> = None;
    for partial in partials {
        let (loss, grads) = partial?;
        total_loss += loss;
        match &mut total {
            None => total = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (ae, ge) in a.data_mut().iter_mut().zip(g.data()) {
                        *ae += ge;
                    }
                }
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    let mut grads = total.expect("non-empty batch");
    for g in &mut grads {
        for e in g.data_mut() {
            *e *= inv;
        }
    }
    Ok((total_loss * inv, grads))
}

fn sample_gradients(
    patch: &Patch,
    gt: &Vector3<f64>,
    params: &ModelParams,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let bound = bind(params, &mut tape);
    let x = tape.leaf(patch_to_tensor(patch));
    let g = tape.leaf(Tensor::from_vec(1, 3, vec![gt.x, gt.y, gt.z]));
    let fwd = forward_var(&mut tape, x, &bound)?;
    let loss = sine_loss_var(&mut tape, fwd.normal, g)?;
    let loss_val = tape.value(loss).scalar();
    let mut grads_all = tape.backward(loss)?;
    let grads = bound
        .leaves
        .iter()
        .enumerate()
        .map(|(i, &var)| {
            grads_all.take(var).unwrap_or_else(|| {
                let t = params.tensors()[i];
                Tensor::zeros(t.rows(), t.cols())
            })
        })
        .collect();
    Ok((loss_val, grads))
}

#[derive(Debug)]
pub struct TrainResult {
    pub params: ModelParams,
    /// Mean sine loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Minimizes the mean sine loss over shuffled mini-batches. Weights start
/// Kaiming-uniform from `mcfg.seed`; the temperature starts at 1.
pub fn train(
    dataset: &[(Patch, Vector3<f64>)],
    tcfg: &TrainConfig,
    mcfg: &ModelConfig,
) -> Result<TrainResult> {
    tcfg.validate()?;
    mcfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut params = ModelParams::init(mcfg)?;
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha20Rng::seed_from_u64(tcfg.seed);
    let n_tensors = params.tensors().len();
    let theta_index = n_tensors - 1;
    let mut loss_curve = Vec::with_capacity(tcfg.epochs);
    let mut indices: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..tcfg.epochs {
        let lr = effective_lr(tcfg, epoch);
        indices.shuffle(&mut rng);
        let mut epoch_loss_sum = 0.0;
        for batch in indices.chunks(tcfg.batch_size) {
            let (mean_loss, mut grads) = batch_gradients(dataset, batch, &params)?;
            if !mean_loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss at epoch {}",
                    epoch
                )));
            }
            epoch_loss_sum += mean_loss * batch.len() as f64;
            if tcfg.freeze_temperature {
                grads[theta_index] = Tensor::zeros(1, 1);
            }
            adam_step(&mut params, &grads, &mut state, lr, tcfg)?;
        }
        loss_curve.push(epoch_loss_sum / dataset.len() as f64);
    }
    Ok(TrainResult { params, loss_curve })
}

/// Predicted unit normal for one patch.
pub fn predict(patch: &Patch, params: &ModelParams) -> Result<Vector3<f64>> {
    crate::model::forward(patch, params).map(|(n, _)| n)
}

/// Predictions for many patches, parallel but order-preserving.
pub fn predict_all(patches: &[Patch], params: &ModelParams) -> Result<Vec<Vector3<f64>>> {
    patches
        .par_iter()
        .map(|p| predict(p, params))
        .collect::<std::result::Result<Vec<_>, _>>()
}
