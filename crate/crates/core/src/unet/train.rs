//! Adam optimization of the denoising network on noisy/clean image pairs.
//!
//! A run performs `epochs * ceil(n / batch_size)` optimizer steps. Each epoch
//! reshuffles the pair order with its own seeded stream, every step draws its
//! dropout mask from a seed derived from the step counter, and the last
//! partial batch of an epoch still trains, so the whole procedure is
//! reproducible from `TrainConfig` alone.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::PairRecord;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;
use crate::unet::{forward_on_tape, UNetParams};

const SHUFFLE_SALT: u64 = 0x7368_7566;
const MASK_SALT: u64 = 0x6d61_736b;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 50,
            epochs: 3,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            shuffle_seed: 11,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "learning_rate must be finite and positive, got {}",
                self.learning_rate
            )));
        }
        for (name, beta) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::config(format!(
                    "{name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        if !(self.adam_epsilon.is_finite() && self.adam_epsilon > 0.0) {
            return Err(Error::config(format!(
                "adam_epsilon must be finite and positive, got {}",
                self.adam_epsilon
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates, one slot per parameter tensor in the
/// order kernel then bias per layer.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub steps: usize,
}

impl AdamState {
    pub fn new(params: &UNetParams) -> Self {
        let mut m = Vec::with_capacity(params.layers.len() * 2);
        for layer in &params.layers {
            m.push(vec![0.0; layer.kernel.numel()]);
            m.push(vec![0.0; layer.bias.numel()]);
        }
        AdamState {
            v: m.clone(),
            m,
            steps: 0,
        }
    }
}

/// The bias-corrected Adam update for one parameter slot at step `t` (1-based).
fn adam_update_slot(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: usize,
    cfg: &TrainConfig,
) {
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let m_corr = 1.0 - b1.powi(t as i32);
    let v_corr = 1.0 - b2.powi(t as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / m_corr;
        let v_hat = v[i] / v_corr;
        theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
    }
}

/// Apply one Adam step. `grads` must hold one slot per parameter tensor in
/// the same order as [`AdamState::new`] laid them out.
pub fn adam_step(
    params: &mut UNetParams,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != state.m.len() {
        return Err(Error::contract(format!(
            "expected {} gradient slots, got {}",
            state.m.len(),
            grads.len()
        )));
    }
    let step = state.steps + 1;
    for (slot, grad) in grads.iter().enumerate() {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Train {
                step,
                msg: format!("non-finite gradient in slot {slot}"),
            });
        }
    }
    state.steps = step;
    let mut slot = 0;
    for layer in params.layers.iter_mut() {
        for theta in [layer.kernel.data_mut(), layer.bias.data_mut()] {
            if grads[slot].len() != theta.len() {
                return Err(Error::contract(format!(
                    "gradient slot {slot} holds {} values for a {}-value parameter",
                    grads[slot].len(),
                    theta.len()
                )));
            }
            adam_update_slot(
                theta,
                &grads[slot],
                &mut state.m[slot],
                &mut state.v[slot],
                step,
                cfg,
            );
            slot += 1;
        }
    }
    Ok(())
}

fn batch_tensors(pairs: &[PairRecord], indices: &[usize], size: usize) -> Result<(Tensor, Tensor)> {
    let plane = size * size;
    let mut noisy = Vec::with_capacity(indices.len() * plane);
    let mut clean = Vec::with_capacity(indices.len() * plane);
    for &i in indices {
        let pair = &pairs[i];
        if pair.noisy.height() != size
            || pair.noisy.width() != size
            || pair.clean.height() != size
            || pair.clean.width() != size
        {
            return Err(Error::shape(format!(
                "pair {} is {}x{}, the network expects {size}x{size}",
                pair.id,
                pair.noisy.height(),
                pair.noisy.width()
            )));
        }
        noisy.extend_from_slice(pair.noisy.data());
        clean.extend_from_slice(pair.clean.data());
    }
    let shape = vec![indices.len(), 1, size, size];
    Ok((
        Tensor::new(shape.clone(), noisy)?,
        Tensor::new(shape, clean)?,
    ))
}

/// Train in place, returning the per-step batch loss history.
pub fn train(
    params: &mut UNetParams,
    pairs: &[PairRecord],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    params.config.validate()?;
    if pairs.is_empty() {
        return Err(Error::data("cannot train on an empty pair set"));
    }
    let size = params.config.input_size;
    let mut state = AdamState::new(params);
    let mut history = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut rng = seed::stream_rng(seed::mix(cfg.shuffle_seed, SHUFFLE_SALT), epoch as u64);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (x, target) = batch_tensors(pairs, batch, size)?;
            let mask_seed = seed::mix(seed::mix(cfg.shuffle_seed, MASK_SALT), step);
            let mut pass = forward_on_tape(params, x, true, mask_seed)?;
            let target = pass.tape.leaf(target, false);
            let loss = pass.tape.mse_loss(pass.output, target)?;
            let loss_value = pass.tape.value(loss).data()[0];
            if !loss_value.is_finite() {
                return Err(Error::Train {
                    step: state.steps + 1,
                    msg: format!("non-finite loss {loss_value}"),
                });
            }
            pass.tape.backward(loss)?;
            let grads: Vec<Vec<f64>> = pass
                .layer_vars
                .iter()
                .flat_map(|lv| [lv.kernel, lv.bias])
                .map(|var| {
                    pass.tape
                        .grad(var)
                        .map(<[f64]>::to_vec)
                        .ok_or_else(|| Error::contract("missing parameter gradient"))
                })
                .collect::<Result<_>>()?;
            adam_step(params, &grads, &mut state, cfg)?;
            history.push(loss_value);
            step += 1;
        }
    }
    Ok(history)
}
