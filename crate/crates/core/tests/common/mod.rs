//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use momentum_ct::nn::conv::ConvLayer;
use momentum_ct::nn::{train::sample_loss_grad, DenoiserParams, Variant};
use momentum_ct::projector::{DenseOperator, SystemOperator};
use momentum_ct::{rng, Image, Sinogram, WeightDiag};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Below this roundoff dominates; much above it steps start crossing ReLU kinks.
pub const FD_STEP: f64 = 1e-5;

/// Relative error with an absolute floor for entries that are both tiny.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn random3(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
    let mut g = rng::stream(seed, 77);
    Array3::from_shape_fn(shape, |_| StandardNormal.sample(&mut g))
}

/// Max relative error of one conv layer's analytic gradients against central
/// differences of `L = Σ c ⊙ conv(x)`.
pub fn conv_gradient_error(in_ch: usize, out_ch: usize, seed: u64) -> f64 {
    let mut g = rng::stream(seed, 1);
    let mut layer = ConvLayer::<f64>::he(in_ch, out_ch, 3, &mut g);
    for b in layer.bias.iter_mut() {
        *b = g.gen_range(-0.5..0.5);
    }
    let x = random3((in_ch, 8, 8), seed ^ 1);
    let c = random3((out_ch, 8, 8), seed ^ 2);
    let loss = |l: &ConvLayer<f64>, x: &Array3<f64>| (l.forward(x.view()).unwrap() * &c).sum();
    let (gin, grad) = layer.backward(x.view(), c.view(), true).unwrap();
    let gin = gin.unwrap();
    let mut worst: f64 = 0.0;
    let mut xp = x.clone();
    for idx in 0..x.len() {
        let orig = xp.as_slice().unwrap()[idx];
        xp.as_slice_mut().unwrap()[idx] = orig + FD_STEP;
        let up = loss(&layer, &xp);
        xp.as_slice_mut().unwrap()[idx] = orig - FD_STEP;
        let dn = loss(&layer, &xp);
        xp.as_slice_mut().unwrap()[idx] = orig;
        worst = worst.max(rel_err(gin.as_slice().unwrap()[idx], (up - dn) / (2.0 * FD_STEP)));
    }
    for idx in 0..layer.weight.len() {
        let orig = layer.weight.as_slice().unwrap()[idx];
        layer.weight.as_slice_mut().unwrap()[idx] = orig + FD_STEP;
        let up = loss(&layer, &x);
        layer.weight.as_slice_mut().unwrap()[idx] = orig - FD_STEP;
        let dn = loss(&layer, &x);
        layer.weight.as_slice_mut().unwrap()[idx] = orig;
        worst = worst.max(rel_err(grad.weight.as_slice().unwrap()[idx], (up - dn) / (2.0 * FD_STEP)));
    }
    for idx in 0..layer.bias.len() {
        let orig = layer.bias[idx];
        layer.bias[idx] = orig + FD_STEP;
        let up = loss(&layer, &x);
        layer.bias[idx] = orig - FD_STEP;
        let dn = loss(&layer, &x);
        layer.bias[idx] = orig;
        worst = worst.max(rel_err(grad.bias[idx], (up - dn) / (2.0 * FD_STEP)));
    }
    worst
}

/// Max relative error of the full denoiser's parameter gradients for the MSE
/// training loss, per layer.
pub fn denoiser_gradient_errors(variant: Variant, channels: usize, seed: u64) -> Vec<f64> {
    let mut params = DenoiserParams::<f64>::random(variant, channels, seed);
    let mut g = rng::stream(seed, 2);
    for layer in &mut params.layers {
        for b in layer.bias.iter_mut() {
            *b = g.gen_range(-0.1..0.1);
        }
    }
    let x = random3((1, 8, 8), seed ^ 3);
    let t = random3((1, 8, 8), seed ^ 4);
    let (_, grads) = sample_loss_grad(&params, &x, &t).unwrap();
    let loss = |p: &DenoiserParams<f64>| sample_loss_grad(p, &x, &t).unwrap().0;
    let mut out = Vec::new();
    for li in 0..params.layers.len() {
        let mut worst: f64 = 0.0;
        for idx in 0..params.layers[li].weight.len() {
            let set = |p: &mut DenoiserParams<f64>, v: f64| p.layers[li].weight.as_slice_mut().unwrap()[idx] = v;
            let orig = params.layers[li].weight.as_slice().unwrap()[idx];
            set(&mut params, orig + FD_STEP);
            let up = loss(&params);
            set(&mut params, orig - FD_STEP);
            let dn = loss(&params);
            set(&mut params, orig);
            worst = worst.max(rel_err(grads[li].weight.as_slice().unwrap()[idx], (up - dn) / (2.0 * FD_STEP)));
        }
        for idx in 0..params.layers[li].bias.len() {
            let orig = params.layers[li].bias[idx];
            params.layers[li].bias[idx] = orig + FD_STEP;
            let up = loss(&params);
            params.layers[li].bias[idx] = orig - FD_STEP;
            let dn = loss(&params);
            params.layers[li].bias[idx] = orig;
            worst = worst.max(rel_err(grads[li].bias[idx], (up - dn) / (2.0 * FD_STEP)));
        }
        out.push(worst);
    }
    out
}

/// Largest singular value of a conv layer's linear map on `h × w` inputs,
/// by a plain power method on `KᵀK` from a Gaussian start.
pub fn conv_operator_norm(layer: &ConvLayer<f32>, h: usize, w: usize, iters: usize, seed: u64) -> f64 {
    let l64 = ConvLayer::<f64> {
        weight: layer.weight.mapv(|v| v as f64),
        bias: layer.bias.mapv(|v| v as f64),
        rsn: None,
    };
    let mut v = random3((l64.in_channels(), h, w), seed);
    let mut sigma = 0.0;
    for _ in 0..iters {
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v /= n;
        let kv = l64.apply_linear(v.view()).unwrap();
        sigma = kv.iter().map(|a| a * a).sum::<f64>().sqrt();
        v = l64.apply_transpose(kv.view()).unwrap();
    }
    sigma
}

/// Dense matrix of `A` with one column per pixel, by projecting basis images.
pub fn densify<A: SystemOperator>(op: &A) -> Array2<f64> {
    let (r, c) = op.image_shape();
    let (vr, vc) = op.sinogram_shape();
    let mut m = Array2::zeros((vr * vc, r * c));
    for p in 0..r * c {
        let mut e = Image::zeros(r, c);
        e.as_slice_mut()[p] = 1.0;
        let col = op.forward(&e).unwrap();
        for (q, &v) in col.as_slice().iter().enumerate() {
            m[[q, p]] = v;
        }
    }
    m
}

pub fn random_image(n: usize, seed: u64, lo: f64, hi: f64) -> Image {
    let mut g = rng::stream(seed, 3);
    Image::new(Array2::from_shape_fn((n, n), |_| g.gen_range(lo..hi)))
}

pub fn random_sino(shape: (usize, usize), seed: u64, lo: f64, hi: f64) -> Sinogram {
    let mut g = rng::stream(seed, 4);
    Sinogram::new(Array2::from_shape_fn(shape, |_| g.gen_range(lo..hi)))
}

/// Small random problem with a nonnegative dense system matrix.
pub fn random_instance(seed: u64) -> (DenseOperator, Sinogram, WeightDiag, Image, Image, f64) {
    let mut g = rng::stream(seed, 9);
    let (n, m) = (g.gen_range(2..5), g.gen_range(3..9));
    let a = Array2::from_shape_fn((m, n * n), |_| if g.gen_bool(0.3) { 0.0 } else { g.gen_range(0.0..2.0) });
    let op = DenseOperator::new(a, (n, n), (m, 1)).unwrap();
    let y = random_sino((m, 1), seed, -1.0, 3.0);
    let w = WeightDiag::new(random_sino((m, 1), seed + 1, 0.0, 3.0).into_inner());
    let z = random_image(n, seed + 2, -0.5, 1.5);
    let x = random_image(n, seed + 3, 0.0, 2.0);
    let beta = 10f64.powf(g.gen_range(-3.0..1.0));
    (op, y, w, z, x, beta)
}

