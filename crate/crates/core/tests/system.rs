mod common;

use common::*;
use momentum_ct::fbp::{fbp_reconstruct, fbp_unclamped, FbpOptions, FilterKind};
use momentum_ct::momentum::*;
use momentum_ct::nn::{denoiser_train_layer, DenoiserParams, Identity, TrainHyper, Variant};
use momentum_ct::noise::{simulate_counts, NoiseModel};
use momentum_ct::projector::*;
use momentum_ct::*;
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

fn weights(shape: (usize, usize), seed: u64) -> WeightDiag {
    WeightDiag::new(random_sino(shape, seed, 0.0, 3.0).into_inner())
}

/// Dense `Aᵀ diag(w) A`.
fn normal_matrix(a: &Array2<f64>, w: &WeightDiag) -> Array2<f64> {
    let wa = Array2::from_shape_fn(a.dim(), |(i, j)| w.as_slice()[i] * a[[i, j]]);
    a.t().dot(&wa)
}

#[test]
fn adjoint_identity_on_desk_geometries() {
    for (n, views, dets) in [(16, 24, 32), (32, 60, 48), (33, 17, 51)] {
        let g = FanBeamGeometry::desk(n, views, dets).unwrap();
        let p = FanBeamProjector::new(&g).unwrap();
        for k in 0..20 {
            let x = random_image(n, 100 + k, -1.0, 1.0);
            let u = random_sino(g.sinogram_shape(), 200 + k, -1.0, 1.0);
            let ax = p.forward(&x).unwrap();
            let lhs = ax.dot(&u);
            let rhs = x.dot(&p.back(&u).unwrap());
            assert!((lhs - rhs).abs() / (ax.norm() * u.norm()) < 1e-10);
        }
    }
}

#[test]
fn back_projection_is_the_dense_transpose() {
    let g = FanBeamGeometry::desk(8, 16, 16).unwrap();
    let p = FanBeamProjector::new(&g).unwrap();
    let a = densify(&p);
    let u = random_sino(g.sinogram_shape(), 3, -1.0, 1.0);
    let dense = a.t().dot(&ndarray::Array1::from(u.as_slice().to_vec()));
    let bp = p.back(&u).unwrap();
    for (x, y) in bp.as_slice().iter().zip(dense.iter()) {
        assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
    }
}

#[test]
fn majorizer_matches_dense_computation() {
    let g = FanBeamGeometry::desk(8, 16, 16).unwrap();
    let p = FanBeamProjector::new(&g).unwrap();
    let a = densify(&p);
    let w = weights(g.sinogram_shape(), 7);
    let expected = normal_matrix(&a, &w).sum_axis(ndarray::Axis(1));
    let got = majorizer_diag(&p, &w).unwrap();
    let scale = expected.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (x, y) in got.as_slice().iter().zip(expected.iter()) {
        assert!((x - y).abs() <= 1e-12 * scale, "{x} vs {y}");
    }
    assert!(got.as_slice().iter().all(|&v| v >= 0.0));
}

#[test]
fn majorizer_dominates_normal_operator() {
    let g = FanBeamGeometry::desk(16, 20, 24).unwrap();
    let p = FanBeamProjector::new(&g).unwrap();
    let w = weights(g.sinogram_shape(), 8);
    let d = majorizer_diag(&p, &w).unwrap();
    for k in 0..100 {
        let v = random_image(16, 300 + k, -1.0, 1.0);
        let lhs: f64 = v.as_slice().iter().zip(d.as_slice()).map(|(a, b)| a * a * b).sum();
        let rhs = v.dot(&normal_apply(&p, &w, &v).unwrap());
        assert!(lhs >= rhs - 1e-12 * v.dot(&v));
    }
}

#[test]
fn spectral_radius_against_dense_eigensolve() {
    let g = FanBeamGeometry::desk(8, 16, 16).unwrap();
    let p = FanBeamProjector::new(&g).unwrap();
    for seed in 0..3 {
        let w = weights(g.sinogram_shape(), 40 + seed);
        let h = normal_matrix(&densify(&p), &w);
        let m = DMatrix::from_row_slice(64, 64, h.as_slice().unwrap());
        let lambda = SymmetricEigen::new(m).eigenvalues.max();
        let est = power_iteration(&p, &w, 2000, 1e-12).unwrap();
        assert!(est.lambda <= lambda * (1.0 + 1e-12));
        assert!(est.lambda >= lambda * (1.0 - 1e-6), "{} vs {lambda}", est.lambda);
        // Rayleigh quotients never decrease for a positive semidefinite operator
        for pair in est.rayleigh.windows(2) {
            assert!(pair[1] >= pair[0] * (1.0 - 1e-12));
        }
    }
}

#[test]
fn noiseless_fbp_error_is_bounded() {
    let g = FanBeamGeometry::desk(128, 360, 192).unwrap();
    let p = FanBeamProjector::new(&g).unwrap();
    let x = phantom::shepp_logan(128, 0);
    let y = p.forward(&x).unwrap();
    let hann = fbp_reconstruct(&g, &y, FilterKind::HannApodizedRamp).unwrap();
    let ramp = fbp_reconstruct(&g, &y, FilterKind::Ramp).unwrap();
    assert!(metrics::rmse_hu(&hann, &x, None).unwrap() < 125.0);
    assert!(metrics::rmse_hu(&ramp, &x, None).unwrap() < 76.0);
}

#[test]
fn fbp_is_linear_before_clamping() {
    let g = FanBeamGeometry::desk(32, 64, 48).unwrap();
    let y1 = random_sino(g.sinogram_shape(), 1, 0.0, 2.0);
    let y2 = random_sino(g.sinogram_shape(), 2, -1.0, 1.0);
    let opts = FbpOptions::from(FilterKind::default());
    let sum = Sinogram::new(y1.as_array() + y2.as_array());
    let lhs = fbp_unclamped(&g, &sum, opts).unwrap();
    let rhs = fbp_unclamped(&g, &y1, opts).unwrap().as_array() + fbp_unclamped(&g, &y2, opts).unwrap().as_array();
    let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in lhs.as_slice().iter().zip(rhs.iter()) {
        assert!((a - b).abs() <= 1e-12 * scale);
    }
}

#[test]
fn fbp_commutes_with_quarter_turns() {
    let g = FanBeamGeometry::desk(64, 180, 96).unwrap();
    let p = FanBeamProjector::new(&g).unwrap();
    let x = phantom::shepp_logan(64, 5);
    let rec = |img: &Image| fbp_reconstruct(&g, &p.forward(img).unwrap(), FilterKind::HannApodizedRamp).unwrap();
    let a = rec(&x.rot90());
    let b = rec(&x).rot90();
    let peak = b.as_slice().iter().fold(0.0f64, |m, v| m.max(*v));
    for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((u - v).abs() <= 1e-6 * peak);
    }
}

#[test]
fn poisson_gaussian_moments() {
    let noise = NoiseModel::low_dose(2024);
    let ideal = Sinogram::from_elem(1, 100_000, 2.0);
    let counts = simulate_counts(&ideal, &noise, 0).unwrap();
    let n = counts.len() as f64;
    let mean = counts.sum() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let expected = 1e4 * (-2.0f64).exp();
    assert!((mean - expected).abs() < 0.01 * expected, "{mean}");
    assert!((var - (mean + 25.0)).abs() < 0.03 * (mean + 25.0), "{var}");
}

#[test]
fn mm_update_never_increases_cost() {
    for seed in 0..100 {
        let (op, y, w, z, x, beta) = random_instance(seed);
        let d = majorizer_diag(&op, &w).unwrap();
        let next = mbir_update(&op, &y, &w, &z, &x, beta, &d).unwrap();
        assert!(next.min_value() >= 0.0);
        let before = pwls_cost(&op, &y, &w, &z, beta, &x).unwrap();
        let after = pwls_cost(&op, &y, &w, &z, beta, &next).unwrap();
        assert!(after <= before * (1.0 + 1e-14) + 1e-300, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn identity_refiner_without_momentum_decreases_data_fit() {
    let g = FanBeamGeometry::desk(16, 24, 32).unwrap();
    let p = FanBeamProjector::new(&g).unwrap();
    let x = phantom::shepp_logan(16, 4);
    let y = p.forward(&x).unwrap();
    let w = weights(g.sinogram_shape(), 5);
    let problem = MbirProblem::new(&p, y.clone(), w.clone(), DEFAULT_CHI, SpectralSettings::default()).unwrap();
    let x0 = Image::zeros(16, 16);
    let layers = vec![LayerConfig { rho: 0.999_999, ..LayerConfig::new(&Identity) }; 30];
    let opts = RunOptions {
        momentum: false,
        keep_images: true,
        mask: None,
    };
    let rec = run_momentum_net(&p, &problem, &layers, &x0, Some(&x), &opts).unwrap();
    let data = |img: &Image| pwls_cost(&p, &y, &w, img, 0.0, img).unwrap();
    let mut prev = data(&x0);
    for t in &rec.trace {
        let img = t.image.as_ref().unwrap();
        assert!(img.min_value() >= 0.0);
        assert_eq!(t.m, 0.0);
        let f = data(img);
        assert!(f <= prev * (1.0 + 1e-12), "layer {}: {prev} -> {f}", t.layer);
        prev = f;
    }
}

#[test]
fn momentum_coefficients_follow_the_recurrence() {
    let g = FanBeamGeometry::desk(16, 24, 32).unwrap();
    let p = FanBeamProjector::new(&g).unwrap();
    let x = phantom::shepp_logan(16, 1);
    let problem =
        MbirProblem::new(&p, p.forward(&x).unwrap(), WeightDiag::ones(24, 32), DEFAULT_CHI, SpectralSettings::default())
            .unwrap();
    let layers = vec![LayerConfig::new(&Identity); 6];
    let rec = run_momentum_net(&p, &problem, &layers, &Image::zeros(16, 16), None, &RunOptions::default()).unwrap();
    let ms: Vec<f64> = rec.trace.iter().map(|t| t.m).collect();
    let mut t = 1.0;
    let mut expected = vec![0.0];
    for _ in 1..6 {
        let (next, m) = momentum_coeffs(t).unwrap();
        expected.push(m);
        t = next;
    }
    assert_eq!(ms, expected);
    assert!(rec.trace.iter().all(|t| t.rmse_hu.is_none()));
}

fn tiny_training_set(p: &FanBeamProjector, g: &FanBeamGeometry) -> Vec<TrainingSample> {
    let noise = NoiseModel::low_dose(3);
    (0..4u64)
        .map(|s| {
            let r = phantom::shepp_logan(16, s + 1);
            let y = noise::simulate_low_dose(&p.forward(&r).unwrap(), &noise, s).unwrap();
            let w = noise::weights_for(&y, &noise);
            let x0 = fbp_reconstruct(g, &y, FilterKind::default()).unwrap();
            let problem = MbirProblem::new(p, y, w, DEFAULT_CHI, SpectralSettings::default()).unwrap();
            TrainingSample { problem, x0, reference: r }
        })
        .collect()
}

#[test]
fn greedy_training_warm_starts_each_layer() {
    let g = FanBeamGeometry::desk(16, 24, 32).unwrap();
    let p = FanBeamProjector::new(&g).unwrap();
    let samples = tiny_training_set(&p, &g);
    let net = NetConfig {
        layers: 3,
        channels: 4,
        first_layer_epochs: Some(2),
        ..NetConfig::default()
    };
    // later layers get zero epochs, so each must equal its initialisation
    let hyper = TrainHyper {
        epochs: 0,
        ..TrainHyper::default()
    };
    let mut seen = Vec::new();
    let params = train_momentum_net(&p, &samples, &net, &hyper, |l, prm, _| {
        seen.push((l, prm.clone()));
        Ok(())
    })
    .unwrap();
    assert_eq!(seen.len(), 3);
    assert_ne!(params[0], DenoiserParams::random(Variant::SimpleCnn, 4, net.seed));
    assert_eq!(params[1], params[0]);
    assert_eq!(params[2], params[0]);
}

#[test]
fn single_layer_training_matches_its_definition() {
    let g = FanBeamGeometry::desk(16, 24, 32).unwrap();
    let p = FanBeamProjector::new(&g).unwrap();
    let samples = tiny_training_set(&p, &g);
    let net = NetConfig {
        layers: 1,
        channels: 4,
        seed: 11,
        ..NetConfig::default()
    };
    let hyper = TrainHyper {
        epochs: 3,
        seed: 2,
        ..TrainHyper::default()
    };
    let params = train_momentum_net(&p, &samples, &net, &hyper, |_, _, _| Ok(())).unwrap();
    let pairs: Vec<_> = samples.iter().map(|s| (s.x0.clone(), s.reference.clone())).collect();
    let (direct, _) = denoiser_train_layer(
        &pairs,
        DenoiserParams::random(Variant::SimpleCnn, 4, 11),
        &layer_hyper(&net, &hyper, 0),
    )
    .unwrap();
    assert_eq!(params[0], direct);
    for s in &samples {
        let layers = [LayerConfig::new(&params[0])];
        let a = run_momentum_net(&p, &s.problem, &layers, &s.x0, None, &RunOptions::default()).unwrap();
        let mut state = MomentumState::new(s.x0.clone());
        state.advance(&p, &s.problem, &direct, DEFAULT_RHO, default_delta(), true).unwrap();
        assert_eq!(a.image, state.x_curr);
    }
}

#[test]
fn reconstruction_is_deterministic() {
    let g = FanBeamGeometry::desk(16, 24, 32).unwrap();
    let p = FanBeamProjector::new(&g).unwrap();
    let s = &tiny_training_set(&p, &g)[0];
    let params = DenoiserParams::<f32>::random(Variant::SimpleCnnRsn, 4, 3);
    let layers = vec![LayerConfig::new(&params); 4];
    let run = || run_momentum_net(&p, &s.problem, &layers, &s.x0, Some(&s.reference), &RunOptions::default()).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.image, b.image);
    assert!(a.image.min_value() >= 0.0);
    let ra: Vec<_> = a.trace.iter().map(|t| t.rmse_hu).collect();
    let rb: Vec<_> = b.trace.iter().map(|t| t.rmse_hu).collect();
    assert_eq!(ra, rb);
}
