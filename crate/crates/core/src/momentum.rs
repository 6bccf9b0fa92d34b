//! Momentum-Net: image refining, extrapolation and majorized PWLS modules
//! composed into layers, plus greedy layer-wise training.
//!
//! Layer `l` maps `(x⁽ˡ⁾, x⁽ˡ⁻¹⁾)` to `x⁽ˡ⁺¹⁾`:
//!
//! ```text
//! z  = (1-ρ) x⁽ˡ⁾ + ρ D(x⁽ˡ⁾)
//! x́  = x⁽ˡ⁾ + δ² m⁽ˡ⁾ (x⁽ˡ⁾ - x⁽ˡ⁻¹⁾)
//! x⁽ˡ⁺¹⁾ = [x́ - (AᵀW(Ax́ - y) + β(x́ - z)) / (AᵀWA1 + β)]₊
//! ```

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Image, Sinogram, WeightDiag};
use crate::metrics::rmse_hu;
use crate::nn::{denoiser_train_layer, DenoiserParams, ImageDenoiser, TrainHyper, TrainLog, Variant};
use crate::projector::{majorizer_diag, power_iteration, SystemOperator};
use crate::rng;

pub const DEFAULT_RHO: f64 = 0.5;
pub const DEFAULT_CHI: f64 = 119.0;

/// `δ = 1 - ε` for the working precision.
pub fn default_delta() -> f64 {
    1.0 - f64::EPSILON
}

/// `z = (1-ρ)x + ρD(x)`.
pub fn refine<D: ImageDenoiser + ?Sized>(x: &Image, denoiser: &D, rho: f64) -> Result<Image> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidParameter(format!("rho must lie in (0, 1], got {rho}")));
    }
    let d = denoiser.denoise(x)?;
    d.check_shape(x.shape())?;
    if !d.is_finite() {
        return Err(Error::NonFinite("denoiser output"));
    }
    Ok(Image::new(x.as_array() * (1.0 - rho) + d.as_array() * rho))
}

/// Next FISTA-style coefficient pair `(t, m)` from `t_prev`.
pub fn momentum_coeffs(t_prev: f64) -> Result<(f64, f64)> {
    if !(t_prev >= 1.0) {
        return Err(Error::InvalidParameter(format!("t must be at least 1, got {t_prev}")));
    }
    let t = 0.5 * (1.0 + (1.0 + 4.0 * t_prev * t_prev).sqrt());
    Ok((t, (t_prev - 1.0) / t))
}

/// `x́ = x + δ²m(x - x_prev)`.
pub fn extrapolate(x_curr: &Image, x_prev: &Image, m: f64, delta: f64) -> Result<Image> {
    x_prev.check_shape(x_curr.shape())?;
    if !(0.0..=1.0).contains(&m) || !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "extrapolation needs m in [0, 1] and delta in (0, 1], got m = {m}, delta = {delta}"
        )));
    }
    let step = delta * delta * m;
    Ok(Image::new(x_curr.as_array() + &((x_curr.as_array() - x_prev.as_array()) * step)))
}

/// Power-iteration settings used by [`select_beta`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSettings {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SpectralSettings {
    fn default() -> Self {
        SpectralSettings {
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

/// `β = λ̂_max(Aᵀ diag(w) A) / χ*`.
pub fn select_beta<A: SystemOperator + ?Sized>(
    op: &A,
    w: &WeightDiag,
    chi: f64,
    settings: SpectralSettings,
) -> Result<f64> {
    if !(chi > 0.0) {
        return Err(Error::InvalidParameter(format!("chi must be positive, got {chi}")));
    }
    let lambda = power_iteration(op, w, settings.max_iters, settings.tol)?.lambda;
    beta_from_radius(lambda, chi)
}

pub fn beta_from_radius(lambda: f64, chi: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "spectral radius estimate {lambda} is not positive (all-zero weights?)"
        )));
    }
    Ok(lambda / chi)
}

/// `F(x; y, z) = ½‖y - Ax‖²_W + (β/2)‖x - z‖²`.
pub fn pwls_cost<A: SystemOperator + ?Sized>(
    op: &A,
    y: &Sinogram,
    w: &WeightDiag,
    z: &Image,
    beta: f64,
    x: &Image,
) -> Result<f64> {
    let ax = op.forward(x)?;
    y.check_shape(ax.shape())?;
    w.check_shape(ax.shape())?;
    z.check_shape(x.shape())?;
    let data: f64 = ax
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .zip(w.as_slice())
        .map(|((a, b), wi)| wi * (b - a) * (b - a))
        .sum();
    let prior: f64 = x.as_slice().iter().zip(z.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(0.5 * data + 0.5 * beta * prior)
}

/// One majorize-minimize step on `F(·; y, z)` from `x́`, projected onto `x ≥ 0`.
#[allow(clippy::too_many_arguments)]
pub fn mbir_update<A: SystemOperator + ?Sized>(
    op: &A,
    y: &Sinogram,
    w: &WeightDiag,
    z: &Image,
    x_acute: &Image,
    beta: f64,
    majorizer: &Image,
) -> Result<Image> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    let shape = op.image_shape();
    x_acute.check_shape(shape)?;
    z.check_shape(shape)?;
    majorizer.check_shape(shape)?;
    y.check_shape(op.sinogram_shape())?;
    let mut residual = op.forward(x_acute)?;
    for ((r, &yi), &wi) in residual.as_slice_mut().iter_mut().zip(y.as_slice()).zip(w.as_slice()) {
        *r = wi * (*r - yi);
    }
    let grad_data = op.back(&residual)?;
    let mut out = x_acute.clone();
    for (((x, &g), &zi), &d) in out
        .as_slice_mut()
        .iter_mut()
        .zip(grad_data.as_slice())
        .zip(z.as_slice())
        .zip(majorizer.as_slice())
    {
        let grad = g + beta * (*x - zi);
        *x = (*x - grad / (d + beta)).max(0.0);
    }
    Ok(out)
}

/// Per-sample MBIR data: measurements, weights, `AᵀWA1` and `β`.
#[derive(Clone, Debug)]
pub struct MbirProblem {
    pub y: Sinogram,
    pub w: WeightDiag,
    pub majorizer: Image,
    pub beta: f64,
}

impl MbirProblem {
    /// Computes the majorizer and the adaptive `β` for this sample.
    pub fn new<A: SystemOperator + ?Sized>(
        op: &A,
        y: Sinogram,
        w: WeightDiag,
        chi: f64,
        settings: SpectralSettings,
    ) -> Result<Self> {
        let beta = select_beta(op, &w, chi, settings)?;
        Self::with_beta(op, y, w, beta)
    }

    pub fn with_beta<A: SystemOperator + ?Sized>(op: &A, y: Sinogram, w: WeightDiag, beta: f64) -> Result<Self> {
        y.check_shape(op.sinogram_shape())?;
        let majorizer = majorizer_diag(op, &w)?;
        Ok(MbirProblem { y, w, majorizer, beta })
    }

    pub fn cost<A: SystemOperator + ?Sized>(&self, op: &A, z: &Image, x: &Image) -> Result<f64> {
        pwls_cost(op, &self.y, &self.w, z, self.beta, x)
    }
}

/// Iterate pair and momentum sequence position.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumState {
    pub x_curr: Image,
    pub x_prev: Image,
    pub t: f64,
    /// Number of layers applied so far.
    pub layer: usize,
}

/// Intermediate quantities of one layer.
#[derive(Clone, Debug)]
pub struct LayerStep {
    pub z: Image,
    pub x_acute: Image,
    pub m: f64,
}

impl MomentumState {
    /// `x⁽⁰⁾ = x⁽⁻¹⁾ = x₀`, `t⁽⁰⁾ = 1`.
    pub fn new(x0: Image) -> Self {
        MomentumState {
            x_prev: x0.clone(),
            x_curr: x0,
            t: 1.0,
            layer: 0,
        }
    }

    /// Apply one Momentum-Net layer in place.
    pub fn advance<A, D>(
        &mut self,
        op: &A,
        problem: &MbirProblem,
        denoiser: &D,
        rho: f64,
        delta: f64,
        momentum: bool,
    ) -> Result<LayerStep>
    where
        A: SystemOperator + ?Sized,
        D: ImageDenoiser + ?Sized,
    {
        let z = refine(&self.x_curr, denoiser, rho)?;
        // x⁽⁰⁾ = x⁽⁻¹⁾, so the first layer has nothing to extrapolate
        let mut m = 0.0;
        if self.layer > 0 {
            let (t, coeff) = momentum_coeffs(self.t)?;
            self.t = t;
            m = coeff;
        }
        if !momentum {
            m = 0.0;
        }
        let x_acute = extrapolate(&self.x_curr, &self.x_prev, m, delta)?;
        let next = mbir_update(op, &problem.y, &problem.w, &z, &x_acute, problem.beta, &problem.majorizer)?;
        if !next.is_finite() {
            return Err(Error::NonFinite("MBIR update"));
        }
        self.x_prev = std::mem::replace(&mut self.x_curr, next);
        self.layer += 1;
        Ok(LayerStep { z, x_acute, m })
    }
}

/// One layer's refiner and mixing parameters.
#[derive(Clone, Copy)]
pub struct LayerConfig<'a> {
    pub rho: f64,
    pub delta: f64,
    pub denoiser: &'a dyn ImageDenoiser,
}

impl<'a> LayerConfig<'a> {
    pub fn new(denoiser: &'a dyn ImageDenoiser) -> Self {
        LayerConfig {
            rho: DEFAULT_RHO,
            delta: default_delta(),
            denoiser,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    /// Use the extrapolation modules; when false every `m` is forced to zero.
    pub momentum: bool,
    /// Keep each layer's image in the trace.
    pub keep_images: bool,
    /// Pixels counted by the trace RMSE; all when `None`.
    pub mask: Option<Array2<bool>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            momentum: true,
            keep_images: false,
            mask: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// 1-based: the trace entry for `x⁽ˡ⁾`.
    pub layer: usize,
    pub rmse_hu: Option<f64>,
    pub m: f64,
    pub image: Option<Image>,
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub image: Image,
    pub trace: Vec<LayerTrace>,
}

/// Run `layers.len()` Momentum-Net layers from `x₀`.
pub fn run_momentum_net<A: SystemOperator + ?Sized>(
    op: &A,
    problem: &MbirProblem,
    layers: &[LayerConfig<'_>],
    x0: &Image,
    reference: Option<&Image>,
    opts: &RunOptions,
) -> Result<Reconstruction> {
    x0.check_shape(op.image_shape())?;
    let mut state = MomentumState::new(x0.clone());
    let mut trace = Vec::with_capacity(layers.len());
    for (l, cfg) in layers.iter().enumerate() {
        let step = cfg
            .validate()
            .and_then(|_| state.advance(op, problem, cfg.denoiser, cfg.rho, cfg.delta, opts.momentum))
            .map_err(|e| e.at_layer(l))?;
        let rmse = reference
            .map(|r| rmse_hu(&state.x_curr, r, opts.mask.as_ref()))
            .transpose()?;
        trace.push(LayerTrace {
            layer: l + 1,
            rmse_hu: rmse,
            m: step.m,
            image: opts.keep_images.then(|| state.x_curr.clone()),
        });
    }
    Ok(Reconstruction {
        image: state.x_curr,
        trace,
    })
}

/// Shape and schedule of a Momentum-Net.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub layers: usize,
    /// Desired factor `χ*` in the `β` rule.
    pub chi: f64,
    pub rho: f64,
    pub channels: usize,
    pub variant: Variant,
    pub momentum: bool,
    /// Training epochs for the first (randomly initialised) refiner; later,
    /// warm-started refiners use the training schedule's `epochs`.
    pub first_layer_epochs: Option<usize>,
    pub spectral: SpectralSettings,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            layers: 50,
            chi: DEFAULT_CHI,
            rho: DEFAULT_RHO,
            channels: crate::nn::denoiser::DEFAULT_CHANNELS,
            variant: Variant::SimpleCnn,
            momentum: true,
            first_layer_epochs: None,
            spectral: SpectralSettings::default(),
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("net.layers must be at least 1".into()));
        }
        if !(self.chi > 0.0) {
            return Err(Error::Config(format!("net.chi must be positive, got {}", self.chi)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("net.rho must lie in (0, 1), got {}", self.rho)));
        }
        if self.channels == 0 {
            return Err(Error::Config("net.channels must be at least 1".into()));
        }
        Ok(())
    }
}

/// One supervised sample for greedy training.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub problem: MbirProblem,
    pub x0: Image,
    pub reference: Image,
}

/// Hyperparameters for the refiner trained at layer `l`.
pub fn layer_hyper(net: &NetConfig, hyper: &TrainHyper, layer: usize) -> TrainHyper {
    let mut h = hyper.clone();
    h.seed = rng::mix(hyper.seed, layer as u64);
    if layer == 0 {
        if let Some(e) = net.first_layer_epochs {
            h.epochs = e;
        }
    }
    h
}

/// Greedy layer-wise training.
///
/// For each layer: train the refiner on `(x⁽ˡ⁾, x_ref)` over all samples,
/// warm-started from the previous layer's parameters (He initialisation for
/// the first), then push every sample through the new layer. `on_layer` sees
/// each trained network as soon as it exists.
pub fn train_momentum_net<A, F>(
    op: &A,
    samples: &[TrainingSample],
    net: &NetConfig,
    hyper: &TrainHyper,
    mut on_layer: F,
) -> Result<Vec<DenoiserParams<f32>>>
where
    A: SystemOperator + ?Sized,
    F: FnMut(usize, &DenoiserParams<f32>, &TrainLog) -> Result<()>,
{
    net.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no training samples".into()));
    }
    let delta = default_delta();
    let mut states: Vec<MomentumState> = samples.iter().map(|s| MomentumState::new(s.x0.clone())).collect();
    let mut trained: Vec<DenoiserParams<f32>> = Vec::with_capacity(net.layers);
    for l in 0..net.layers {
        let pairs: Vec<(Image, Image)> = states
            .iter()
            .zip(samples)
            .map(|(s, sample)| (s.x_curr.clone(), sample.reference.clone()))
            .collect();
        let init = match trained.last() {
            Some(prev) => prev.clone(),
            None => DenoiserParams::random(net.variant, net.channels, net.seed),
        };
        let (params, log) =
            denoiser_train_layer(&pairs, init, &layer_hyper(net, hyper, l)).map_err(|e| e.at_layer(l))?;
        on_layer(l, &params, &log)?;
        states
            .par_iter_mut()
            .zip(samples)
            .try_for_each(|(state, sample)| {
                state
                    .advance(op, &sample.problem, &params, net.rho, delta, net.momentum)
                    .map(|_| ())
            })
            .map_err(|e| e.at_layer(l))?;
        trained.push(params);
    }
    Ok(trained)
}
