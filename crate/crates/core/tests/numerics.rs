use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stlth_core::numerics::gradcheck::{check_gradients, GradCheckOptions};
use stlth_core::numerics::{
    channel_stats, conv2d, relu, softmax_over_positions, upsample_nearest, Padding, Tape, Tensor,
};

fn rand_tensor<T: stlth_core::numerics::Float>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64(rng.random_range(-1.0..1.0)))
}

/// Direct nested-loop cross-correlation with "same" padding.
fn naive_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: usize,
    padding: Padding,
) -> Tensor<f64> {
    let (bs, cin, h, wd) = x.dims4("oracle").unwrap();
    let (cout, _, kh, kw) = w.dims4("oracle").unwrap();
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let ho = (h + 2 * (kh / 2) - kh) / stride + 1;
    let wo = (wd + 2 * (kw / 2) - kw) / stride + 1;
    let fetch = |bi: usize, c: usize, y: isize, xx: isize| -> f64 {
        let map = |i: isize, n: usize| -> Option<usize> {
            let n = n as isize;
            if (0..n).contains(&i) {
                Some(i as usize)
            } else {
                match padding {
                    Padding::Zero => None,
                    Padding::Reflect => Some(if i < 0 { -i } else { 2 * n - 2 - i } as usize),
                }
            }
        };
        match (map(y, h), map(xx, wd)) {
            (Some(y), Some(xx)) => x.data()[((bi * cin + c) * h + y) * wd + xx],
            _ => 0.0,
        }
    };
    let mut out = vec![0.0; bs * cout * ho * wo];
    for bi in 0..bs {
        for o in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for c in 0..cin {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let y = (oy * stride) as isize + ki as isize - ph;
                                let xx = (ox * stride) as isize + kj as isize - pw;
                                acc += w.data()[((o * cin + c) * kh + ki) * kw + kj] * fetch(bi, c, y, xx);
                            }
                        }
                    }
                    out[((bi * cout + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![bs, cout, ho, wo], out).unwrap()
}

#[test]
fn conv_all_ones_center_is_nine() {
    let x = Tensor::<f32>::ones(vec![1, 1, 3, 3]);
    let w = Tensor::<f32>::ones(vec![1, 1, 3, 3]);
    let y = conv2d(&x, &w, None, 1, Padding::Zero).unwrap();
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    assert_eq!(y.data()[4], 9.0);
}

#[test]
fn conv_identity_kernel_with_reflect_padding_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Tensor<f32> = rand_tensor(&[2, 1, 5, 6], &mut rng);
    let mut w = Tensor::<f32>::zeros(vec![1, 1, 3, 3]);
    w.data_mut()[4] = 1.0;
    let y = conv2d(&x, &w, None, 1, Padding::Reflect).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn conv_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for padding in [Padding::Reflect, Padding::Zero] {
        for stride in [1, 2] {
            let x: Tensor<f64> = rand_tensor(&[2, 4, 8, 8], &mut rng);
            let w: Tensor<f64> = rand_tensor(&[6, 4, 3, 3], &mut rng);
            let b: Tensor<f64> = rand_tensor(&[6], &mut rng);
            let want = naive_conv(&x, &w, Some(&b), stride, padding);
            let got = conv2d(&x.cast::<f32>(), &w.cast::<f32>(), Some(&b.cast::<f32>()), stride, padding).unwrap();
            assert_eq!(got.shape(), want.shape());
            assert!(got.cast::<f64>().max_abs_diff(&want) <= 1e-5, "{padding:?} stride {stride}");
        }
    }
}

#[test]
fn conv_shape_errors_name_the_dimension() {
    let x = Tensor::<f32>::zeros(vec![1, 3, 8, 8]);
    let w = Tensor::<f32>::zeros(vec![4, 2, 3, 3]);
    let err = conv2d(&x, &w, None, 1, Padding::Zero).unwrap_err().to_string();
    assert!(err.contains("channels"), "{err}");
    let w = Tensor::<f32>::zeros(vec![4, 3, 3]);
    assert!(conv2d(&x, &w, None, 1, Padding::Zero).is_err());
}

#[test]
fn relu_examples() {
    let x = Tensor::<f32>::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
    assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);

    let mut tape = Tape::<f32>::new();
    let v = tape.leaf(Tensor::full(vec![4], -0.5), true);
    let r = tape.relu(v);
    assert!(tape.value(r).data().iter().all(|&x| x == 0.0));
    let s = tape.sum(r);
    tape.backward(s).unwrap();
    assert!(tape.grad(v).unwrap().iter().all(|&g| g == 0.0));
}

#[test]
fn upsample_examples() {
    let x = Tensor::<f32>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = upsample_nearest(&x, 2).unwrap();
    assert_eq!(y.data(), &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]);
    assert_eq!(upsample_nearest(&x, 1).unwrap().data(), x.data());
}

#[test]
fn upsample_backward_is_block_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Tensor<f32> = rand_tensor(&[2, 3, 4, 5], &mut rng);
    let upstream: Tensor<f32> = rand_tensor(&[2, 3, 12, 15], &mut rng);
    let mut tape = Tape::new();
    let xv = tape.leaf(x, true);
    let y = tape.upsample_nearest(xv, 3).unwrap();
    let u = tape.constant(upstream.clone());
    let p = tape.mul(y, u).unwrap();
    let s = tape.sum(p);
    tape.backward(s).unwrap();
    let g = tape.grad(xv).unwrap();
    for plane in 0..6 {
        for i in 0..4 {
            for j in 0..5 {
                let mut acc = 0.0f32;
                for di in 0..3 {
                    for dj in 0..3 {
                        acc += upstream.data()[plane * 180 + (i * 3 + di) * 15 + j * 3 + dj];
                    }
                }
                assert!((g[plane * 20 + i * 5 + j] - acc).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn channel_stats_examples() {
    let eps = 1e-5f64;
    let x = Tensor::<f64>::full(vec![1, 1, 3, 3], 5.0);
    let (m, s) = channel_stats(&x, eps).unwrap();
    assert_eq!(m.data(), &[5.0]);
    assert!((s.data()[0] - eps.sqrt()).abs() < 1e-15);

    let x = Tensor::<f64>::new(vec![1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
    let (m, s) = channel_stats(&x, eps).unwrap();
    assert_eq!(m.data(), &[2.0]);
    assert!((s.data()[0] - (1.0 + eps).sqrt()).abs() < 1e-15);
}

#[test]
fn channel_stats_match_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Tensor<f32> = rand_tensor(&[3, 5, 7, 6], &mut rng);
    let (m, s) = channel_stats(&x, 1e-5).unwrap();
    for p in 0..15 {
        let plane: Vec<f64> = x.data()[p * 42..(p + 1) * 42].iter().map(|&v| v as f64).collect();
        let mu = plane.iter().sum::<f64>() / 42.0;
        let var = plane.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 42.0;
        assert!((m.data()[p] as f64 - mu).abs() <= 1e-5);
        assert!((s.data()[p] as f64 - (var + 1e-5).sqrt()).abs() <= 1e-5);
    }
}

#[test]
fn softmax_examples() {
    let x = Tensor::<f32>::zeros(vec![1, 1, 4]);
    assert_eq!(softmax_over_positions(&x).unwrap().data(), &[0.25; 4]);
    let x = Tensor::<f32>::new(vec![1, 1, 2], vec![1000.0, 0.0]).unwrap();
    assert_eq!(softmax_over_positions(&x).unwrap().data(), &[1.0, 0.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Tensor<f32> = Tensor::from_fn(vec![3, 7, 11], |_| rng.random_range(-20.0..20.0));
    let y = softmax_over_positions(&x).unwrap();
    for row in y.data().chunks(11) {
        let s: f64 = row.iter().map(|&v| v as f64).sum();
        assert!((s - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn backward_examples() {
    let xs = Tensor::<f32>::new(vec![3], vec![1.5, -2.0, 0.25]).unwrap();
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap(), true);
    let x = tape.constant(xs.clone());
    let p = tape.mul(w, x).unwrap();
    let loss = tape.sum(p);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(w).unwrap(), xs.data());
    let first = tape.grad(w).unwrap().to_vec();
    tape.backward(loss).unwrap();
    let doubled: Vec<f32> = first.iter().map(|g| g * 2.0).collect();
    assert_eq!(tape.grad(w).unwrap(), doubled.as_slice());
    tape.clear_grads();
    assert!(tape.grad(w).is_none());

    let err = tape.backward(p).unwrap_err().to_string();
    assert!(err.contains("scalar"), "{err}");
}

#[test]
fn composite_conv_relu_mean_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inputs: Vec<Tensor<f64>> =
        vec![rand_tensor(&[2, 3, 6, 6], &mut rng), rand_tensor(&[4, 3, 3, 3], &mut rng), rand_tensor(&[4], &mut rng)];
    let report = check_gradients(&inputs, GradCheckOptions::for_f64(), |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), 1, Padding::Reflect)?;
        let r = t.relu(y);
        Ok(t.mean(r))
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-6, "{report:?}");
}

type Builder = fn(&mut Tape<f64>, &[stlth_core::numerics::Var]) -> stlth_core::Result<stlth_core::numerics::Var>;

/// One gradient check per differentiable operation, each reduced to a scalar
/// through a fixed random projection so every output coordinate matters.
fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Builder)> {
    fn project(t: &mut Tape<f64>, y: stlth_core::numerics::Var) -> stlth_core::Result<stlth_core::numerics::Var> {
        let shape = t.shape(y).to_vec();
        let w = Tensor::from_fn(shape, |i| ((i * 7919 % 17) as f64 - 8.0) / 8.0);
        let w = t.constant(w);
        let p = t.mul(y, w)?;
        Ok(t.sum(p))
    }
    vec![
        ("conv2d_reflect_stride2", vec![vec![2, 3, 6, 6], vec![4, 3, 3, 3], vec![4]], |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), 2, Padding::Reflect)?;
            project(t, y)
        }),
        ("conv2d_zero_1x1", vec![vec![2, 3, 4, 4], vec![5, 3, 1, 1], vec![5]], |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), 1, Padding::Zero)?;
            project(t, y)
        }),
        ("relu", vec![vec![3, 4, 5]], |t, v| {
            let y = t.relu(v[0]);
            project(t, y)
        }),
        ("sigmoid", vec![vec![3, 4]], |t, v| {
            let y = t.sigmoid(v[0]);
            project(t, y)
        }),
        ("upsample_nearest", vec![vec![1, 2, 3, 3]], |t, v| {
            let y = t.upsample_nearest(v[0], 2)?;
            project(t, y)
        }),
        ("avg_pool2", vec![vec![2, 2, 4, 6]], |t, v| {
            let y = t.avg_pool2(v[0])?;
            project(t, y)
        }),
        ("channel_mean", vec![vec![2, 3, 4, 4]], |t, v| {
            let y = t.channel_mean(v[0])?;
            project(t, y)
        }),
        ("channel_std", vec![vec![2, 3, 4, 4]], |t, v| {
            let y = t.channel_std(v[0], 1e-5)?;
            project(t, y)
        }),
        ("channel_normalize", vec![vec![2, 3, 3, 3]], |t, v| {
            let (m, s) = t.channel_stats(v[0], 1e-5)?;
            let y = t.channel_normalize(v[0], m, s)?;
            project(t, y)
        }),
        ("channel_affine", vec![vec![2, 3, 3, 3], vec![2, 3], vec![2, 3]], |t, v| {
            let y = t.channel_affine(v[0], v[1], v[2])?;
            project(t, y)
        }),
        ("softmax", vec![vec![2, 3, 5]], |t, v| {
            let y = t.softmax_last(v[0])?;
            project(t, y)
        }),
        ("bmm_plain", vec![vec![2, 3, 4], vec![2, 4, 5]], |t, v| {
            let y = t.bmm(v[0], v[1], false, false)?;
            project(t, y)
        }),
        ("bmm_transposed", vec![vec![2, 4, 3], vec![2, 5, 4]], |t, v| {
            let y = t.bmm(v[0], v[1], true, true)?;
            project(t, y)
        }),
        ("add_sub_mul_scale", vec![vec![6], vec![6]], |t, v| {
            let a = t.add(v[0], v[1])?;
            let s = t.sub(a, v[1])?;
            let m = t.mul(s, v[1])?;
            let y = t.scale(m, 1.5);
            project(t, y)
        }),
        ("sample_l2", vec![vec![3, 2, 2]], |t, v| {
            let y = t.sample_l2(v[0])?;
            project(t, y)
        }),
        ("reshape_mean", vec![vec![2, 6]], |t, v| {
            let y = t.reshape(v[0], vec![3, 4])?;
            let y = t.scale(y, 2.0);
            let p = project(t, y)?;
            let m = t.mean(y);
            t.add(p, m)
        }),
    ]
}

#[test]
fn every_operation_passes_gradcheck_in_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (name, shapes, build) in op_cases() {
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_tensor(s, &mut rng)).collect();
        let report = check_gradients(&inputs, GradCheckOptions::for_f64(), build).unwrap();
        assert!(report.max_rel_error <= 1e-6, "{name}: {report:?}");
        assert!(report.checked > 0);
    }
}

#[test]
fn smooth_operations_pass_gradcheck_in_f32() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs: Vec<Tensor<f32>> = vec![rand_tensor(&[2, 3, 4, 4], &mut rng), rand_tensor(&[2, 3, 3, 3], &mut rng)];
    let report = check_gradients(&inputs, GradCheckOptions::for_f32(), |t, v| {
        let y = t.conv2d(v[0], v[1], None, 1, Padding::Reflect)?;
        let (m, s) = t.channel_stats(y, 1e-5)?;
        let ms = t.add(m, s)?;
        Ok(t.sum(ms))
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-3, "{report:?}");
}

#[test]
fn forward_backward_is_bitwise_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Tensor<f32> = rand_tensor(&[2, 3, 8, 8], &mut rng);
        let w: Tensor<f32> = rand_tensor(&[4, 3, 3, 3], &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let wv = tape.leaf(w, true);
        let y = tape.conv2d(xv, wv, None, 1, Padding::Reflect).unwrap();
        let y = tape.relu(y);
        let l = tape.sample_l2(y).unwrap();
        let l = tape.mean(l);
        tape.backward(l).unwrap();
        (tape.value(l).item().to_bits(), tape.grad(wv).unwrap().iter().map(|g| g.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}
