use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nlpd::{nlpd, nlpd_grad, NlpdParams};

/// Log-uniform luminance spanning `decades` over a smooth ramp plus noise.
fn fixture(w: usize, h: usize, decades: f64, seed: u64) -> Plane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Plane::from_fn(w, h, |x, y| {
        let t = (x + y) as f64 / (w + h).max(2) as f64;
        let e = (0.7 * t + 0.3 * rng.random::<f64>()) * decades;
        0.05 * 10f64.powf(e)
    })
}

/// Randomized weights with non-trivial normalization parameters.
fn weights(seed: u64, lambda_mode: LambdaMode) -> CanWeights {
    let arch = ArchConfig {
        lambda_mode,
        ..Default::default()
    };
    let mut w = CanWeights::init(arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for net in [&mut w.bandpass, &mut w.lowpass] {
        for l in 0..3 {
            net.lambda1[l]
                .iter_mut()
                .for_each(|v| *v = rng.random_range(0.5..1.5));
            net.lambda2[l]
                .iter_mut()
                .for_each(|v| *v = rng.random_range(0.2..1.0));
            net.running_rms[l]
                .iter_mut()
                .for_each(|v| *v = rng.random_range(0.5..2.0));
        }
    }
    w
}

fn random_plane(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Plane {
    Plane::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn param_counts_follow_layer_shapes() {
    let w = CanWeights::init(ArchConfig::default(), 0).unwrap();
    assert_eq!(w.arch.params_per_net(), (19_008, 192));
    assert_eq!(param_count(&w), 38_400);
    let m = Manifest::describe(&w);
    assert_eq!(m.params.conv_total, 38_016);
    assert_eq!(m.params.total, 38_400);
    assert!(m.layers.iter().all(|l| !l.bias));
    let shapes: Vec<[usize; 4]> = m.layers[..4].iter().map(|l| l.kernel_shape).collect();
    assert_eq!(
        shapes,
        vec![[32, 1, 3, 3], [32, 32, 3, 3], [32, 32, 3, 3], [1, 32, 3, 3]]
    );
    let scalar = CanWeights::init(
        ArchConfig {
            lambda_mode: LambdaMode::Scalar,
            ..Default::default()
        },
        0,
    )
    .unwrap();
    assert_eq!(param_count(&scalar), 38_016 + 12);
}

#[test]
fn initialization_statistics() {
    let w = CanWeights::init(ArchConfig::default(), 5).unwrap();
    let k = &w.bandpass.kernels[1];
    let var = k.data().iter().map(|v| v * v).sum::<f64>() / k.len() as f64;
    let expect = 2.0 / (32.0 * 9.0);
    assert!((var / expect - 1.0).abs() < 0.1, "{var} vs {expect}");
    assert_eq!(w.bandpass.lambda1[0], vec![1.0; 32]);
    assert_eq!(w.bandpass.lambda2[2], vec![0.0; 32]);
    assert_ne!(w.bandpass.kernels[0], w.lowpass.kernels[0]);
    assert_eq!(w, CanWeights::init(ArchConfig::default(), 5).unwrap());
}

#[test]
fn zero_maps_to_zero() {
    let w = weights(1, LambdaMode::PerChannel);
    let z = Plane::zeros(9, 7);
    for mode in [Mode::Train, Mode::Infer] {
        assert_eq!(forward_lowpass(&z, &w, mode).unwrap().max_abs(), 0.0);
        let out = forward_bandpass(&[z.clone(), Plane::zeros(5, 4)], &w, mode).unwrap();
        assert!(out.iter().all(|p| p.max_abs() == 0.0));
    }
    assert!(forward_bandpass(&[], &w, Mode::Infer).is_err());
}

#[test]
fn inference_is_scale_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for mode in [LambdaMode::PerChannel, LambdaMode::Scalar] {
        let w = weights(2, mode);
        let y = random_plane(17, 12, &mut rng);
        for net in w.nets() {
            let base = net.forward(&w.arch, &y, Mode::Infer).unwrap().0;
            for alpha in [0.5, 2.0, 10.0] {
                let scaled = net
                    .forward(&w.arch, &y.scale(alpha), Mode::Infer)
                    .unwrap()
                    .0;
                let err = scaled.max_abs_diff(&base.scale(alpha)) / (alpha * base.max_abs());
                assert!(err <= 1e-5, "alpha {alpha}: {err}");
            }
        }
    }
}

#[test]
fn forward_matches_straight_line_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = weights(3, LambdaMode::PerChannel);
    let y = random_plane(11, 13, &mut rng);
    let net = &w.lowpass;
    for mode in [Mode::Train, Mode::Infer] {
        let x0 = Tensor::from_plane(&y);
        let c0 = conv2d(&x0, &net.kernels[0], 1).unwrap();
        let s0 = if mode == Mode::Train {
            ops::channel_rms(&c0)
        } else {
            net.running_rms[0].clone()
        };
        let a0 = ops::lrelu(
            &ops::adaptive_norm(&c0, &net.lambda1[0], &net.lambda2[0], &s0).unwrap(),
            0.2,
        );
        let c1 = conv2d(&a0, &net.kernels[1], 2).unwrap();
        let s1 = if mode == Mode::Train {
            ops::channel_rms(&c1)
        } else {
            net.running_rms[1].clone()
        };
        let a1 = ops::lrelu(
            &ops::adaptive_norm(&c1, &net.lambda1[1], &net.lambda2[1], &s1).unwrap(),
            0.2,
        );
        let c2 = conv2d(&a1, &net.kernels[2], 4).unwrap();
        let s2 = if mode == Mode::Train {
            ops::channel_rms(&c2)
        } else {
            net.running_rms[2].clone()
        };
        let a2 = ops::lrelu(
            &ops::adaptive_norm(&c2, &net.lambda1[2], &net.lambda2[2], &s2).unwrap(),
            0.2,
        );
        let want = conv2d(&a2, &net.kernels[3], 1).unwrap().to_plane().unwrap();
        let (got, sigmas) = net.forward(&w.arch, &y, mode).unwrap();
        assert!(got.max_abs_diff(&want) <= 1e-12 * want.max_abs());
        assert_eq!(sigmas, vec![s0, s1, s2]);
    }
}

#[test]
fn taped_pipeline_equals_pure_pipeline() {
    let w = weights(4, LambdaMode::PerChannel);
    let lum = fixture(21, 14, 4.0, 4);
    let params = PyramidParams::with_levels(3);
    let display = DisplayRange::default();
    for mode in [Mode::Train, Mode::Infer] {
        let pure = tonemap_with_mode(&lum, &w, &params, &display, mode).unwrap();
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, &w);
        let out = tonemap_taped(&mut tape, &vars, &lum, &w, &params, &display, mode).unwrap();
        let taped = tape.value(out.image).to_plane().unwrap();
        assert_eq!(taped, pure.image);
        assert_eq!(out.bandpass_sigmas.len(), 2);
    }
}

#[test]
fn output_range_and_dims() {
    let w = weights(5, LambdaMode::PerChannel);
    let display = DisplayRange::default();
    for (i, decades) in [1.0, 2.0, 3.0, 4.0, 5.0, 6.0].iter().enumerate() {
        let lum = fixture(40, 31, *decades, i as u64);
        let out = tonemap(&lum, &w, &PyramidParams::default(), &display).unwrap();
        assert_eq!(out.image.dims(), (40, 31));
        assert!(out.image.data().iter().all(|&v| display.contains(v)));
        assert_eq!(out.pyramid.levels(), 5);
    }
    for (ww, hh) in [(512, 512), (511, 509)] {
        let lum = fixture(ww, hh, 3.0, 9);
        let out = tonemap(&lum, &w, &PyramidParams::default(), &display).unwrap();
        assert_eq!(out.image.dims(), (ww, hh));
        assert!(out.timing.total() > 0.0);
    }
}

#[test]
fn arbitrary_depth_with_one_weight_set() {
    let w = weights(6, LambdaMode::PerChannel);
    let lum = fixture(37, 29, 3.0, 6);
    let display = DisplayRange::default();
    let mut outputs = Vec::new();
    for m in 1..=6 {
        let out = tonemap(&lum, &w, &PyramidParams::with_levels(m), &display).unwrap();
        assert_eq!(out.pyramid.levels(), m);
        assert!(out.image.data().iter().all(|&v| display.contains(v)));
        outputs.push(out.image);
    }
    assert_ne!(outputs[0], outputs[4]);
}

#[test]
fn deterministic_output() {
    let w = weights(7, LambdaMode::PerChannel);
    let lum = fixture(64, 48, 4.0, 7);
    let a = tonemap(
        &lum,
        &w,
        &PyramidParams::default(),
        &DisplayRange::default(),
    )
    .unwrap();
    let b = tonemap(
        &lum,
        &w,
        &PyramidParams::default(),
        &DisplayRange::default(),
    )
    .unwrap();
    assert_eq!(a.image, b.image);
}

fn pipeline_loss(lum: &Plane, w: &CanWeights, params: &PyramidParams, mode: Mode) -> f64 {
    let np = NlpdParams {
        pyramid: params.clone(),
        ..Default::default()
    };
    let img = tonemap_with_mode(lum, w, params, &DisplayRange::default(), mode)
        .unwrap()
        .image;
    nlpd(lum, &img, &np).unwrap().distance
}

fn pipeline_grad(lum: &Plane, w: &CanWeights, params: &PyramidParams, mode: Mode) -> Vec<Vec<f64>> {
    let np = NlpdParams {
        pyramid: params.clone(),
        ..Default::default()
    };
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, w);
    let out = tonemap_taped(
        &mut tape,
        &vars,
        lum,
        w,
        params,
        &DisplayRange::default(),
        mode,
    )
    .unwrap();
    let img = tape.value(out.image).to_plane().unwrap();
    let g = nlpd_grad(lum, &img, &np).unwrap();
    tape.backward_with(out.image, Tensor::from_plane(&g))
        .unwrap();
    vars.grads(&tape)
}

/// Worst relative error over the listed `(tensor, index)` coordinates.
fn weight_fd(
    lum: &Plane,
    w: &CanWeights,
    params: &PyramidParams,
    mode: Mode,
    coords: &[(usize, usize)],
) -> f64 {
    let grads = pipeline_grad(lum, w, params, mode);
    let scale = grads.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut worst: f64 = 0.0;
    for &(t, i) in coords {
        let base = w.params()[t][i];
        let a = grads[t][i];
        // The loss is piecewise smooth (LReLU, |z|): a single step either
        // straddles a kink or drowns weak coordinates in summation
        // roundoff, so take the best of a short ladder of steps.
        let mut err = f64::INFINITY;
        for rel in [1e-5, 1e-4, 1e-6] {
            let h = rel * base.abs().max(0.1);
            let f = |d: f64| {
                let mut p = w.clone();
                p.params_mut()[t][i] = base + d;
                pipeline_loss(lum, &p, params, mode)
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            err = err.min((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6 * scale));
            if err <= 1e-5 {
                break;
            }
        }
        worst = worst.max(err);
    }
    worst
}

#[test]
fn pipeline_gradient_every_weight_8x8() {
    let w = weights(8, LambdaMode::PerChannel);
    let lum = fixture(8, 8, 3.0, 8);
    let params = PyramidParams::with_levels(3);
    let coords: Vec<(usize, usize)> = w
        .params()
        .iter()
        .enumerate()
        .flat_map(|(t, p)| (0..p.len()).map(move |i| (t, i)))
        .collect();
    let worst = weight_fd(&lum, &w, &params, Mode::Train, &coords);
    assert!(worst <= 1e-4, "{worst}");
}

#[test]
fn pipeline_gradient_sampled_weights() {
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
        let w = weights(
            40 + seed,
            if seed % 2 == 0 {
                LambdaMode::PerChannel
            } else {
                LambdaMode::Scalar
            },
        );
        let lum = fixture(rng.random_range(8..17), rng.random_range(8..17), 4.0, seed);
        let params = PyramidParams::with_levels(rng.random_range(1..5));
        let sizes: Vec<usize> = w.params().iter().map(|p| p.len()).collect();
        let coords: Vec<(usize, usize)> = (0..sizes.len())
            .flat_map(|t| (0..3).map(move |j| (t, j)))
            .map(|(t, _)| (t, rng.random_range(0..sizes[t])))
            .collect();
        for mode in [Mode::Train, Mode::Infer] {
            let worst = weight_fd(&lum, &w, &params, mode, &coords);
            assert!(worst <= 1e-4, "seed {seed} {mode:?}: {worst}");
        }
    }
}

#[test]
fn weights_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    let mut w = weights(9, LambdaMode::PerChannel);
    w.meta.epochs = 12;
    w.meta.training = Some(serde_json::json!({"lr": 1e-3}));
    save_weights(&w, &path).unwrap();
    let back = load_weights(&path).unwrap();
    assert_eq!(back, w);
    let lum = fixture(30, 20, 3.0, 9);
    let p = PyramidParams::default();
    let d = DisplayRange::default();
    let a = tonemap(&lum, &w, &p, &d).unwrap().image;
    let b = tonemap(&lum, &back, &p, &d).unwrap().image;
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn weights_version_and_truncation_errors() {
    let w = weights(10, LambdaMode::Scalar);
    let bytes = encode_weights(&w).unwrap();
    let mut wrong = bytes.clone();
    wrong[8] = 99;
    assert!(matches!(
        decode_weights(&wrong),
        Err(Error::Version { found: 99, .. })
    ));
    for cut in [0, 10, 30, bytes.len() - 8, bytes.len() - 1] {
        assert!(
            matches!(decode_weights(&bytes[..cut]), Err(Error::Parse { .. })),
            "cut {cut}"
        );
    }
    assert!(matches!(
        decode_weights(b"garbage-garbage-garbage"),
        Err(Error::Parse { .. })
    ));
    let (back, manifest) = decode_weights(&bytes).unwrap();
    assert_eq!(back, w);
    assert_eq!(manifest.params.total, 38_016 + 12);
}
