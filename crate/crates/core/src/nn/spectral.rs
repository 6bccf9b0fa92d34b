//! Real spectral normalisation of a convolution layer.
//!
//! The operator norm is that of the full zero-padded convolution acting on
//! `in_ch × h × w` inputs, not of the reshaped kernel matrix. It is estimated
//! by power iteration on `KᵀK`, warm-started from singular vectors persisted
//! in the layer between calls.

use ndarray::Array3;
use rand_distr::{Distribution, StandardNormal};

use super::conv::ConvLayer;
use super::Real;
use crate::rng;

const INIT_SEED: u64 = 0x5253_4e00;

/// Persisted left (`u`, output-shaped) and right (`v`, input-shaped) singular vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct RsnState<T> {
    pub u: Array3<T>,
    pub v: Array3<T>,
}

impl<T: Real> RsnState<T> {
    fn init(layer: &ConvLayer<T>, spatial: (usize, usize)) -> Self {
        let (h, w) = spatial;
        let mut r = rng::stream(INIT_SEED, (layer.in_channels() * 1000 + layer.out_channels()) as u64);
        let mut v = Array3::from_shape_fn((layer.in_channels(), h, w), |_| {
            T::of(StandardNormal.sample(&mut r))
        });
        normalize(&mut v);
        RsnState {
            u: Array3::zeros((layer.out_channels(), h, w)),
            v,
        }
    }

    fn matches(&self, layer: &ConvLayer<T>, spatial: (usize, usize)) -> bool {
        self.v.dim() == (layer.in_channels(), spatial.0, spatial.1)
            && self.u.dim() == (layer.out_channels(), spatial.0, spatial.1)
    }
}

fn normalize<T: Real>(a: &mut Array3<T>) -> T {
    let norm = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    if norm > T::zero() {
        a.mapv_inplace(|x| flush(x / norm));
    }
    norm
}

/// Power iteration decays the non-dominant components geometrically; left
/// alone they end up subnormal, which makes every later convolution crawl.
fn flush<T: Real>(x: T) -> T {
    if x.abs() < T::min_positive_value() {
        T::zero()
    } else {
        x
    }
}

/// Power-iteration estimate of the layer's operator norm, updating the
/// persisted vectors in place.
pub fn estimate_operator_norm<T: Real>(layer: &mut ConvLayer<T>, spatial: (usize, usize), power_iters: usize) -> T {
    let mut state = match layer.rsn.take() {
        Some(s) if s.matches(layer, spatial) => s,
        _ => RsnState::init(layer, spatial),
    };
    let mut sigma = T::zero();
    for _ in 0..power_iters.max(1) {
        let mut u = layer.apply_linear(state.v.view()).expect("state matches layer");
        normalize(&mut u);
        let mut v = layer.apply_transpose(u.view()).expect("state matches layer");
        // ‖Kᵀu‖ = uᵀK v_new
        sigma = normalize(&mut v);
        if sigma > T::zero() {
            state.u = u;
            state.v = v;
        }
    }
    layer.rsn = Some(state);
    sigma
}

/// Divide the layer's weights by its estimated operator norm. Returns the
/// estimate; a zero operator is left untouched.
pub fn normalize_in_place<T: Real>(layer: &mut ConvLayer<T>, spatial: (usize, usize), power_iters: usize) -> T {
    let sigma = estimate_operator_norm(layer, spatial, power_iters);
    if sigma > T::of(1e-12) {
        layer.weight.mapv_inplace(|w| w / sigma);
        // Renormalisation shrinks directions Adam does not reinforce by 1/σ
        // every step. Entries this far below the largest cannot change an
        // output, but their products with small activations go subnormal.
        let floor = layer.weight.iter().fold(T::zero(), |m, w| m.max(w.abs())) * T::epsilon() * T::epsilon();
        layer.weight.mapv_inplace(|w| if w.abs() < floor { T::zero() } else { w });
    }
    sigma
}

pub fn spectral_normalize<T: Real>(mut layer: ConvLayer<T>, spatial: (usize, usize), power_iters: usize) -> ConvLayer<T> {
    normalize_in_place(&mut layer, spatial, power_iters);
    layer
}
