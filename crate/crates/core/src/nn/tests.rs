use super::*;
use crate::error::Error;
use crate::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: [usize; 4], data: &[f64]) -> Tensor {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

fn randn(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn run1(
    build: impl Fn(&mut Tape, &[Var]) -> crate::Result<Var>,
    inputs: &[Tensor],
) -> crate::Result<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().cloned().map(|x| tape.leaf(x)).collect();
    let out = build(&mut tape, &vars)?;
    Ok(tape.value(out).clone())
}

#[test]
fn conv2d_identity_kernel() {
    let out = run1(
        |tp, v| tp.conv2d(v[0], v[1], Some(v[2]), 1, 0),
        &[Tensor::full([1, 1, 3, 3], 1.0), t([1, 1, 1, 1], &[1.0]), t([1, 1, 1, 1], &[0.0])],
    )
    .unwrap();
    assert_eq!(out.shape(), [1, 1, 3, 3]);
    assert!(out.data().iter().all(|&v| v == 1.0));
}

#[test]
fn conv2d_same_padding_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = run1(
        |tp, v| tp.conv2d(v[0], v[1], None, 1, 1),
        &[randn([2, 3, 32, 32], &mut rng), randn([16, 3, 3, 3], &mut rng)],
    )
    .unwrap();
    assert_eq!(out.shape(), [2, 16, 32, 32]);
}

#[test]
fn conv2d_hand_dot_product() {
    // [[1,2],[3,4]] · [[1,0],[0,1]] = 1 + 4
    let out = run1(
        |tp, v| tp.conv2d(v[0], v[1], Some(v[2]), 1, 0),
        &[t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), t([1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]), t([1, 1, 1, 1], &[0.0])],
    )
    .unwrap();
    assert_eq!(out.data(), &[5.0]);
}

#[test]
fn conv2d_channel_mismatch_is_dimension_error() {
    let r = run1(
        |tp, v| tp.conv2d(v[0], v[1], None, 1, 0),
        &[Tensor::zeros([1, 2, 4, 4]), Tensor::zeros([1, 3, 3, 3])],
    );
    assert!(matches!(r, Err(Error::Dimension(_))));
    let r = run1(
        |tp, v| tp.conv2d(v[0], v[1], None, 1, 0),
        &[Tensor::zeros([1, 1, 2, 2]), Tensor::zeros([1, 1, 3, 3])],
    );
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn depthwise_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = randn([1, 4, 8, 8], &mut rng);
    let ident = run1(|tp, v| tp.depthwise_conv2d(v[0], v[1], None, 1, 0), &[x.clone(), Tensor::full([4, 1, 1, 1], 1.0)]).unwrap();
    assert_eq!(ident.data(), x.data());

    let same = run1(|tp, v| tp.depthwise_conv2d(v[0], v[1], None, 1, 1), &[x, randn([4, 1, 3, 3], &mut rng)]).unwrap();
    assert_eq!(same.shape(), [1, 4, 8, 8]);

    let sums = run1(
        |tp, v| tp.depthwise_conv2d(v[0], v[1], None, 1, 0),
        &[t([1, 2, 2, 2], &[1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 0.5, 2.0]), Tensor::full([2, 1, 2, 2], 1.0)],
    )
    .unwrap();
    assert_eq!(sums.data(), &[10.0, 2.0]);

    let bad = run1(|tp, v| tp.depthwise_conv2d(v[0], v[1], None, 1, 0), &[Tensor::zeros([1, 3, 4, 4]), Tensor::zeros([2, 1, 3, 3])]);
    assert!(matches!(bad, Err(Error::Dimension(_))));
}

#[test]
fn pointwise_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = randn([1, 3, 5, 5], &mut rng);
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 3 + i] = 1.0;
    }
    let out = run1(|tp, v| tp.pointwise_conv2d(v[0], v[1], None), &[x.clone(), t([3, 3, 1, 1], &eye)]).unwrap();
    assert_eq!(out.data(), x.data());

    let out = run1(|tp, v| tp.pointwise_conv2d(v[0], v[1], None), &[randn([1, 8, 16, 16], &mut rng), randn([4, 8, 1, 1], &mut rng)]).unwrap();
    assert_eq!(out.shape(), [1, 4, 16, 16]);

    let avg = run1(
        |tp, v| tp.pointwise_conv2d(v[0], v[1], Some(v[2])),
        &[t([1, 2, 1, 1], &[2.0, 4.0]), t([1, 2, 1, 1], &[0.5, 0.5]), t([1, 1, 1, 1], &[0.0])],
    )
    .unwrap();
    assert_eq!(avg.data(), &[3.0]);
}

#[test]
fn pooling_examples() {
    let c = run1(|tp, v| tp.max_pool2d(v[0], 2, 2), &[Tensor::full([1, 2, 4, 4], 0.7)]).unwrap();
    assert!(c.data().iter().all(|&v| v == 0.7));
    let g = run1(|tp, v| tp.global_avg_pool2d(v[0]), &[t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])]).unwrap();
    assert_eq!(g.data(), &[2.5]);
    let m = run1(|tp, v| tp.pool2d(v[0], PoolKind::Max, 2, 2), &[t([1, 1, 2, 2], &[1.0, 5.0, 3.0, 2.0])]).unwrap();
    assert_eq!(m.data(), &[5.0]);
    let bad = run1(|tp, v| tp.max_pool2d(v[0], 2, 2), &[Tensor::zeros([1, 1, 3, 4])]);
    assert!(matches!(bad, Err(Error::Config(_))));
    let bad = run1(|tp, v| tp.max_pool2d(v[0], 3, 2), &[Tensor::zeros([1, 1, 6, 6])]);
    assert!(matches!(bad, Err(Error::Config(_))));
}

#[test]
fn upsample_examples() {
    let x = t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(run1(|tp, v| tp.upsample2d_nearest(v[0], 1), &[x.clone()]).unwrap().data(), x.data());
    let up = run1(|tp, v| tp.upsample2d_nearest(v[0], 2), &[x.clone()]).unwrap();
    assert_eq!(up.shape(), [1, 1, 4, 4]);
    assert_eq!(
        up.data(),
        &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
    );
    assert!(matches!(run1(|tp, v| tp.upsample2d_nearest(v[0], 0), &[x]), Err(Error::Config(_))));

    // Blockwise maxima of a 4x4 with distinct values, enumerated by hand.
    let x: Vec<f64> = vec![
        3.0, 9.0, 1.0, 0.0, //
        4.0, 2.0, 7.0, 5.0, //
        8.0, 6.0, 11.0, 15.0, //
        10.0, 12.0, 13.0, 14.0,
    ];
    let out = run1(
        |tp, v| {
            let p = tp.max_pool2d(v[0], 2, 2)?;
            tp.upsample2d_nearest(p, 2)
        },
        &[t([1, 1, 4, 4], &x)],
    )
    .unwrap();
    let expected = [
        9.0, 9.0, 7.0, 7.0, 9.0, 9.0, 7.0, 7.0, 12.0, 12.0, 15.0, 15.0, 12.0, 12.0, 15.0, 15.0,
    ];
    assert_eq!(out.data(), &expected);
}

#[test]
fn dense_examples() {
    let eye = t([2, 2, 1, 1], &[1.0, 0.0, 0.0, 1.0]);
    let out = run1(|tp, v| tp.dense(v[0], v[1], v[2]), &[t([1, 2, 1, 1], &[3.0, -4.0]), eye, t([1, 2, 1, 1], &[0.0, 0.0])]).unwrap();
    assert_eq!(out.data(), &[3.0, -4.0]);

    let out = run1(
        |tp, v| tp.dense(v[0], v[1], v[2]),
        &[t([1, 3, 1, 1], &[1.0, 2.0, 3.0]), t([1, 3, 1, 1], &[1.0, 1.0, 1.0]), t([1, 1, 1, 1], &[1.0])],
    )
    .unwrap();
    assert_eq!(out.data(), &[7.0]);

    let bad = run1(
        |tp, v| tp.dense(v[0], v[1], v[2]),
        &[t([1, 4, 1, 1], &[0.0; 4]), t([1, 3, 1, 1], &[0.0; 3]), t([1, 1, 1, 1], &[0.0])],
    );
    assert!(matches!(bad, Err(Error::Dimension(_))));
}

#[test]
fn activation_examples() {
    let r = run1(|tp, v| tp.activation(Activation::Relu, v[0]), &[t([1, 2, 1, 1], &[-1.0, 2.0])]).unwrap();
    assert_eq!(r.data(), &[0.0, 2.0]);
    let s = run1(|tp, v| tp.activation(Activation::Sigmoid, v[0]), &[t([1, 1, 1, 1], &[0.0])]).unwrap();
    assert_eq!(s.data(), &[0.5]);
    let sm = run1(|tp, v| tp.activation(Activation::SoftmaxRows, v[0]), &[t([1, 2, 1, 1], &[0.0, 0.0])]).unwrap();
    assert_eq!(sm.data(), &[0.5, 0.5]);
    let bad = run1(|tp, v| tp.softmax_rows(v[0]), &[Tensor::zeros([1, 2, 2, 1])]);
    assert!(matches!(bad, Err(Error::Dimension(_))));
}

#[test]
fn relu_derivative_at_zero_is_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(t([1, 3, 1, 1], &[0.0, -0.5, 0.5]));
    let y = tape.relu(x).unwrap();
    tape.backward(y, &[1.0, 1.0, 1.0]).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
}

#[test]
fn backward_dense_bias_gradient_is_ones() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tape = Tape::new();
    let x = tape.leaf(randn([3, 4, 1, 1], &mut rng));
    let w = tape.leaf(randn([2, 4, 1, 1], &mut rng));
    let b = tape.leaf(Tensor::zeros([1, 2, 1, 1]));
    let y = tape.dense(x, w, b).unwrap();
    // d(sum over outputs)/d(bias) per sample; summed over the batch of 3.
    tape.backward(y, &[1.0; 6]).unwrap();
    assert_eq!(tape.grad(b).unwrap(), &[3.0, 3.0]);

    let mut tape = Tape::new();
    let x = tape.leaf(randn([1, 4, 1, 1], &mut rng));
    let w = tape.leaf(randn([2, 4, 1, 1], &mut rng));
    let b = tape.leaf(Tensor::zeros([1, 2, 1, 1]));
    let y = tape.dense(x, w, b).unwrap();
    tape.backward(y, &[1.0; 2]).unwrap();
    assert_eq!(tape.grad(b).unwrap(), &[1.0, 1.0]);
    assert!(tape.records().is_empty());
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::new();
    let x = tape.leaf(randn([1, 2, 4, 4], &mut rng));
    let w = tape.leaf(randn([3, 2, 3, 3], &mut rng));
    let y = tape.conv2d(x, w, None, 1, 1).unwrap();
    let z = tape.sigmoid(y).unwrap();
    tape.backward(z, &vec![0.0; 48]).unwrap();
    assert!(tape.grad(w).unwrap().iter().all(|&g| g == 0.0));
    assert!(tape.grad(x).unwrap().iter().all(|&g| g == 0.0));
}

#[test]
fn backward_without_forward_is_state_error() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros([1, 1, 1, 1]));
    assert!(matches!(tape.backward(x, &[1.0]), Err(Error::State(_))));
}

#[test]
fn every_forward_appends_one_record() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full([1, 2, 4, 4], 0.3));
    let a = tape.max_pool2d(x, 2, 2).unwrap();
    let b = tape.upsample2d_nearest(a, 2).unwrap();
    let c = tape.sigmoid(b).unwrap();
    let _ = tape.mul(x, c).unwrap();
    let names: Vec<_> = tape.records().iter().map(|r| r.op.name()).collect();
    assert_eq!(names, ["max_pool2d", "upsample2d_nearest", "sigmoid", "mul"]);
}

#[test]
fn grad_check_dense_seed_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let inputs = [randn([2, 5, 1, 1], &mut rng), randn([3, 5, 1, 1], &mut rng), randn([1, 3, 1, 1], &mut rng)];
    let err = grad_check(|tp, v| tp.dense(v[0], v[1], v[2]), &inputs, DEFAULT_EPS).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn grad_check_conv_k3_pad1() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let inputs = [randn([1, 2, 6, 6], &mut rng), randn([3, 2, 3, 3], &mut rng), randn([1, 3, 1, 1], &mut rng)];
    let err = grad_check(|tp, v| tp.conv2d(v[0], v[1], Some(v[2]), 1, 1), &inputs, DEFAULT_EPS).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn grad_check_relu_away_from_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut x = randn([1, 3, 4, 4], &mut rng);
    for v in x.data_mut() {
        if v.abs() < 10.0 * DEFAULT_EPS {
            *v = 0.5;
        }
    }
    let err = grad_check(|tp, v| tp.relu(v[0]), &[x], DEFAULT_EPS).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn conv_stride_two_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inputs = [randn([2, 2, 7, 8], &mut rng), randn([2, 2, 3, 3], &mut rng)];
    let err = grad_check(|tp, v| tp.conv2d(v[0], v[1], None, 2, 1), &inputs, DEFAULT_EPS).unwrap();
    assert!(err < 1e-4, "{err}");
    let inputs = [randn([1, 3, 7, 7], &mut rng), randn([3, 1, 3, 3], &mut rng), randn([1, 3, 1, 1], &mut rng)];
    let err = grad_check(|tp, v| tp.depthwise_conv2d(v[0], v[1], Some(v[2]), 2, 1), &inputs, DEFAULT_EPS).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn composition_upsample_global_avg_on_constant_is_identity() {
    let x = Tensor::full([1, 3, 4, 4], 1.25);
    let out = run1(
        |tp, v| {
            let g = tp.global_avg_pool2d(v[0])?;
            tp.upsample2d_nearest(g, 4)
        },
        &[x.clone()],
    )
    .unwrap();
    assert_eq!(out.data(), x.data());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(row in proptest::collection::vec(-15.0f64..15.0, 2..8)) {
        let k = row.len();
        let out = run1(|tp, v| tp.softmax_rows(v[0]), &[Tensor::from_vec([1, k, 1, 1], row).unwrap()]).unwrap();
        let s: f64 = out.data().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(out.data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn odd_kernel_same_padding_preserves_extent(k in prop::sample::select(vec![1usize, 3, 5, 7]), h in 7usize..16, w in 7usize..16) {
        let out = run1(
            |tp, v| tp.conv2d(v[0], v[1], None, 1, (k - 1) / 2),
            &[Tensor::full([1, 1, h, w], 1.0), Tensor::full([2, 1, k, k], 0.1)],
        ).unwrap();
        prop_assert_eq!(out.shape(), [1, 2, h, w]);
    }

    #[test]
    fn max_pool_outputs_come_from_their_window(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = randn([1, 2, 6, 6], &mut rng);
        let out = run1(|tp, v| tp.max_pool2d(v[0], 2, 2), &[x.clone()]).unwrap();
        for c in 0..2 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let o = out.get(0, c, oy, ox);
                    let window: Vec<f64> = (0..4).map(|d| x.get(0, c, oy * 2 + d / 2, ox * 2 + d % 2)).collect();
                    prop_assert!(window.contains(&o));
                    prop_assert!(window.iter().all(|&v| v <= o));
                }
            }
        }
    }

    #[test]
    fn batch_permutation_commutes_with_ops(seed in 0u64..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = randn([3, 2, 4, 4], &mut rng);
        let w = randn([3, 2, 3, 3], &mut rng);
        let dw = randn([3, 1, 3, 3], &mut rng);
        let dense_w = randn([2, 3, 1, 1], &mut rng);
        let dense_b = randn([1, 2, 1, 1], &mut rng);
        let net = |tp: &mut Tape, v: &[Var]| {
            let a = tp.conv2d(v[0], v[1], None, 1, 1)?;
            let a = tp.depthwise_conv2d(a, v[2], None, 1, 1)?;
            let a = tp.relu(a)?;
            let a = tp.max_pool2d(a, 2, 2)?;
            let a = tp.upsample2d_nearest(a, 2)?;
            let a = tp.sigmoid(a)?;
            let a = tp.global_avg_pool2d(a)?;
            let a = tp.dense(a, v[3], v[4])?;
            tp.softmax_rows(a)
        };
        let perm = [2usize, 0, 1];
        let base = run1(net, &[x.clone(), w.clone(), dw.clone(), dense_w.clone(), dense_b.clone()]).unwrap();
        let permuted = run1(net, &[x.select_items(&perm), w, dw, dense_w, dense_b]).unwrap();
        let expected = base.select_items(&perm);
        prop_assert_eq!(permuted.data(), expected.data());
    }
}

#[test]
fn grad_check_flags_untracked_dependence() {
    // The output depends on x through a value the tape never sees, so the
    // analytic gradient is zero while the numeric one is 2x.
    let x = t([1, 1, 1, 3], &[0.5, -1.0, 2.0]);
    let err = grad_check(
        |tp, v| {
            let sq: Vec<f64> = tp.value(v[0]).data().iter().map(|a| a * a).collect();
            let leaf = tp.leaf(Tensor::from_vec([1, 1, 1, 3], sq)?);
            tp.add(leaf, v[0])
        },
        &[x],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err > 0.5, "{err}");
}
