//! Supervised training of one refining network on `(input, reference)` pairs.

use ndarray::{Array3, Zip};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::conv::ConvGrad;
use super::denoiser::DenoiserParams;
use super::spectral::normalize_in_place;
use super::Real;
use crate::error::{Error, Result};
use crate::grid::Image;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate is multiplied by this every `decay_every` epochs.
    pub decay_ratio: f64,
    pub decay_every: usize,
    pub rsn_power_iters: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            epochs: 100,
            batch_size: 5,
            learning_rate: 1e-3,
            decay_ratio: 0.9,
            decay_every: 10,
            rsn_power_iters: 5,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainHyper {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_ratio.powi((epoch / self.decay_every.max(1)) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::InvalidParameter("batch_size and decay_every must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.decay_ratio > 0.0) {
            return Err(Error::InvalidParameter("learning rate and decay ratio must be positive".into()));
        }
        Ok(())
    }
}

/// Per-epoch mean training loss (MSE in scaled units) and learning rate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub loss: Vec<f64>,
    pub lr: Vec<f64>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,loss\n");
        for (e, (lr, loss)) in self.lr.iter().zip(&self.loss).enumerate() {
            out.push_str(&format!("{e},{lr},{loss}\n"));
        }
        out
    }
}

/// Mean squared error over pixels of one sample and its parameter gradient.
pub fn sample_loss_grad<T: Real>(
    params: &DenoiserParams<T>,
    input: &Array3<T>,
    target: &Array3<T>,
) -> Result<(f64, Vec<ConvGrad<T>>)> {
    let (out, cache) = params.forward(input.view())?;
    let n = T::of(out.len() as f64);
    let mut diff = out;
    diff -= target;
    let loss = diff.iter().map(|&d| d.f64() * d.f64()).sum::<f64>() / diff.len() as f64;
    let two_over_n = T::of(2.0) / n;
    diff.mapv_inplace(|d| d * two_over_n);
    let grads = params.backward(&cache, diff.view())?;
    Ok((loss, grads))
}

fn flat<T: Real>(a: &mut ndarray::ArrayBase<impl ndarray::DataMut<Elem = T>, impl ndarray::Dimension>) -> &mut [T] {
    a.as_slice_mut().expect("parameters are contiguous")
}

/// Trains `init` to minimise the mean of `‖x_ref - D(x_in)‖²` with Adam.
///
/// Mini-batches are drawn from a per-epoch shuffle of stream `epoch` of
/// `hyper.seed`. Per-sample gradients may be computed concurrently but are
/// summed in batch order, so results are bit-reproducible. RSN variants
/// normalise every layer after each optimiser step, with the operator size
/// taken from the training images.
pub fn denoiser_train_layer<T: Real>(
    pairs: &[(Image, Image)],
    init: DenoiserParams<T>,
    hyper: &TrainHyper,
) -> Result<(DenoiserParams<T>, TrainLog)> {
    hyper.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    let shape = pairs[0].0.shape();
    for (x, r) in pairs {
        x.check_shape(shape)?;
        r.check_shape(shape)?;
    }
    let mut params = init;
    let data: Vec<(Array3<T>, Array3<T>)> = pairs
        .iter()
        .map(|(x, r)| (params.scale_in(x), params.scale_in(r)))
        .collect();

    let mut states: Vec<(AdamState<T>, AdamState<T>)> = params
        .layers
        .iter()
        .map(|l| (AdamState::new(l.weight.len()), AdamState::new(l.bias.len())))
        .collect();
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..hyper.epochs {
        let lr = hyper.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut rng::stream(hyper.seed, epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let results: Vec<Result<(f64, Vec<ConvGrad<T>>)>> = batch
                .par_iter()
                .map(|&i| sample_loss_grad(&params, &data[i].0, &data[i].1))
                .collect();
            let mut total: Vec<ConvGrad<T>> = params.layers.iter().map(ConvGrad::zeros_like).collect();
            for r in results {
                let (loss, grads) = r?;
                epoch_loss += loss;
                for (t, g) in total.iter_mut().zip(&grads) {
                    t.add_assign(g);
                }
            }
            let inv = T::of(1.0 / batch.len() as f64);
            for ((layer, grad), (sw, sb)) in params.layers.iter_mut().zip(&mut total).zip(&mut states) {
                grad.scale(inv);
                let step = adam_step(flat(&mut layer.weight), flat(&mut grad.weight), sw, lr, &hyper.adam)
                    .and_then(|_| adam_step(flat(&mut layer.bias), flat(&mut grad.bias), sb, lr, &hyper.adam));
                if let Err(Error::NonFinite(_)) = step {
                    return Err(Error::Diverged {
                        epoch,
                        loss: f64::NAN,
                    });
                }
                step?;
            }
            if params.variant.spectral_normalized() {
                for layer in &mut params.layers {
                    normalize_in_place(layer, shape, hyper.rsn_power_iters);
                }
            }
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        log.loss.push(mean);
        log.lr.push(lr);
    }
    if params.variant.spectral_normalized() {
        for layer in &mut params.layers {
            settle_rsn(layer, shape);
        }
    }
    Ok((params, log))
}

/// The per-step estimate lags the weights, so after the last step keep
/// renormalising until a round of warm-started iterations raises the
/// estimate by less than `SETTLE_TOL`.
fn settle_rsn<T: Real>(layer: &mut super::conv::ConvLayer<T>, shape: (usize, usize)) {
    for _ in 0..SETTLE_ROUNDS {
        let sigma = normalize_in_place(layer, shape, SETTLE_ITERS);
        if sigma.f64() <= 1.0 + SETTLE_TOL {
            break;
        }
    }
}

const SETTLE_ROUNDS: usize = 30;
const SETTLE_ITERS: usize = 10;
const SETTLE_TOL: f64 = 1e-4;

/// Mean loss of `params` over `pairs` without training.
pub fn evaluate_loss<T: Real>(params: &DenoiserParams<T>, pairs: &[(Image, Image)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, r) in pairs {
        let (out, _) = params.forward(params.scale_in(x).view())?;
        let target = params.scale_in(r);
        let mut sq = 0.0;
        Zip::from(&out).and(&target).for_each(|&a, &b| {
            let d = a.f64() - b.f64();
            sq += d * d;
        });
        total += sq / out.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}
