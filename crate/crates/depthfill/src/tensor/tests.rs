use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Independent triple-loop product used as the matmul oracle.
fn matmul_oracle(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.data()[i * k + p] * b.data()[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// Independent quadruple-loop cross-correlation used as the conv2d oracle.
fn conv2d_oracle(input: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Vec<f64> {
    let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (cout, kh, kw) = (kernels.shape()[0], kernels.shape()[2], kernels.shape()[3]);
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ci in 0..cin {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                acc += input.data()[ci * h * w + iy as usize * w + ix as usize]
                                    * kernels.data()[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
                out[co * oh * ow + oy * ow + ox] = acc;
            }
        }
    }
    out
}

#[test]
fn add_hand_example() {
    let mut tape = Tape::new();
    let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
    let b = Tensor::new(&[2], vec![3.0, 4.0]).unwrap();
    let c = tape.add(&a, &b).unwrap();
    assert_eq!(c.data(), &[4.0, 6.0]);
}

#[test]
fn relu_definition() {
    let mut tape = Tape::new();
    let x = Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
    let y = tape.relu(&x).unwrap();
    assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn elementwise_shape_mismatch() {
    let mut tape = Tape::new();
    let a = Tensor::zeros(&[2, 2]);
    let b = Tensor::zeros(&[3]);
    assert!(matches!(tape.add(&a, &b), Err(Error::Dim(_))));
}

#[test]
fn div_by_exact_zero_is_domain_error() {
    let mut tape = Tape::new();
    let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
    let b = Tensor::new(&[2], vec![2.0, 0.0]).unwrap();
    assert!(matches!(tape.div(&a, &b), Err(Error::Domain(_))));
    assert!(matches!(tape.div_scalar(&a, 0.0), Err(Error::Domain(_))));
}

#[test]
fn mul_gradient_matches_central_differences() {
    let mut r = rng(7);
    let a = random_tensor(&mut r, &[4, 4]);
    let b = random_tensor(&mut r, &[4, 4]);
    let err = grad_check(
        |tape, inputs| {
            let p = tape.mul(&inputs[0], &inputs[1])?;
            tape.sum_all(&p)
        },
        &[a, b],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "max rel err {err}");
}

#[test]
fn scalar_broadcast_gradients() {
    let mut r = rng(8);
    let a = random_tensor(&mut r, &[3, 2]);
    let s = Tensor::scalar(0.7);
    let err = grad_check(
        |tape, inputs| {
            let d = tape.div(&inputs[0], &inputs[1])?;
            let e = tape.mul(&d, &d)?;
            let f = tape.add(&e, &inputs[1])?;
            tape.sum_all(&f)
        },
        &[a, s],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "max rel err {err}");
}

#[test]
fn matmul_identity_and_hand_example() {
    let mut tape = Tape::new();
    let eye = Tensor::eye(3);
    let mut r = rng(1);
    let b = random_tensor(&mut r, &[3, 2]);
    let prod = tape.matmul(&eye, &b).unwrap();
    assert_eq!(prod.data(), b.data());

    let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let v = Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap();
    let p = tape.matmul(&a, &v).unwrap();
    assert_eq!(p.data(), &[3.0, 7.0]);
}

#[test]
fn matmul_against_triple_loop_oracle() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let a = random_tensor(&mut r, &[5, 7]);
        let b = random_tensor(&mut r, &[7, 3]);
        let mut tape = Tape::new();
        let c = tape.matmul(&a, &b).unwrap();
        let expect = matmul_oracle(&a, &b);
        for (x, y) in c.data().iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn matmul_inner_dim_mismatch() {
    let mut tape = Tape::new();
    let a = Tensor::zeros(&[2, 3]);
    let b = Tensor::zeros(&[4, 2]);
    assert!(matches!(tape.matmul(&a, &b), Err(Error::Dim(_))));
}

#[test]
fn softmax_symmetry_and_shift_invariance() {
    let mut tape = Tape::new();
    let x = Tensor::new(&[2], vec![0.0, 0.0]).unwrap();
    let s = tape.softmax(&x, 0).unwrap();
    assert_eq!(s.data(), &[0.5, 0.5]);

    // No overflow for large equal logits.
    let big = Tensor::new(&[2], vec![1000.0, 1000.0]).unwrap();
    let s = tape.softmax(&big, 0).unwrap();
    assert_eq!(s.data(), &[0.5, 0.5]);
}

#[test]
fn softmax_hand_example() {
    // softmax([0, ln 3]) = [1, 3] / 4
    let mut tape = Tape::new();
    let x = Tensor::new(&[2], vec![0.0, 3.0_f64.ln()]).unwrap();
    let s = tape.softmax(&x, 0).unwrap();
    assert!((s.data()[0] - 0.25).abs() < 1e-12);
    assert!((s.data()[1] - 0.75).abs() < 1e-12);
}

#[test]
fn softmax_slices_sum_to_one() {
    let mut r = rng(3);
    let x = random_tensor(&mut r, &[4, 5, 3]);
    for axis in 0..3 {
        let mut tape = Tape::new();
        let s = tape.softmax(&x, axis).unwrap();
        assert!(s.data().iter().all(|&v| v > 0.0));
        // Sum along the axis must be 1 in every lane.
        let sums = tape.sum_axis(&s, axis).unwrap();
        for &v in sums.data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn conv2d_identity_kernel() {
    let mut r = rng(4);
    let x = random_tensor(&mut r, &[1, 4, 5]);
    let k = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
    let mut tape = Tape::new();
    let y = tape.conv2d(&x, &k, 1, 0).unwrap();
    assert_eq!(y.shape(), x.shape());
    assert_eq!(y.data(), x.data());
}

#[test]
fn conv2d_counting_example() {
    let x = Tensor::ones(&[1, 5, 5]);
    let k = Tensor::ones(&[1, 1, 3, 3]);
    let mut tape = Tape::new();
    let y = tape.conv2d(&x, &k, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 3, 3]);
    assert!(y.data().iter().all(|&v| v == 9.0));
}

#[test]
fn conv2d_against_quadruple_loop_oracle() {
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let x = random_tensor(&mut r, &[3, 6, 7]);
        let k = random_tensor(&mut r, &[4, 3, 3, 3]);
        let stride = 1 + (seed as usize) % 2;
        let padding = (seed as usize) % 2;
        let mut tape = Tape::new();
        let y = tape.conv2d(&x, &k, stride, padding).unwrap();
        let expect = conv2d_oracle(&x, &k, stride, padding);
        for (a, b) in y.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv2d_kernel_too_large() {
    let x = Tensor::zeros(&[1, 2, 2]);
    let k = Tensor::zeros(&[1, 1, 5, 5]);
    let mut tape = Tape::new();
    assert!(matches!(tape.conv2d(&x, &k, 1, 0), Err(Error::Dim(_))));
}

#[test]
fn conv2d_gradient() {
    let mut r = rng(5);
    let x = random_tensor(&mut r, &[2, 4, 4]);
    let k = random_tensor(&mut r, &[3, 2, 3, 3]);
    let err = grad_check(
        |tape, inputs| {
            let y = tape.conv2d(&inputs[0], &inputs[1], 1, 1)?;
            tape.sum_all(&y)
        },
        &[x, k],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "max rel err {err}");
}

#[test]
fn depthwise_identity() {
    let mut r = rng(6);
    let x = random_tensor(&mut r, &[3, 4, 4]);
    let k = Tensor::ones(&[3, 1, 1]);
    let mut tape = Tape::new();
    let y = tape.depthwise_conv2d(&x, &k, 1, 0).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn depthwise_stride_shape() {
    let x = Tensor::zeros(&[8, 16, 16]);
    let k = Tensor::zeros(&[8, 4, 4]);
    let mut tape = Tape::new();
    let y = tape.depthwise_conv2d(&x, &k, 4, 0).unwrap();
    assert_eq!(y.shape(), &[8, 4, 4]);
}

#[test]
fn depthwise_channel_mismatch() {
    let x = Tensor::zeros(&[3, 4, 4]);
    let k = Tensor::zeros(&[2, 3, 3]);
    let mut tape = Tape::new();
    assert!(matches!(
        tape.depthwise_conv2d(&x, &k, 1, 0),
        Err(Error::Dim(_))
    ));
}

#[test]
fn depthwise_separable_equals_composed_generic_convs() {
    // Depthwise kernels as a channel-diagonal generic conv followed by the
    // 1x1 pointwise mixing conv must match the depthwise + pointwise path.
    let mut r = rng(9);
    let c = 3;
    let x = random_tensor(&mut r, &[c, 6, 6]);
    let dw = random_tensor(&mut r, &[c, 3, 3]);
    let pw = random_tensor(&mut r, &[4, c, 1, 1]);

    let mut tape = Tape::new();
    let mid = tape.depthwise_conv2d(&x, &dw, 2, 1).unwrap();
    let got = tape.conv2d(&mid, &pw, 1, 0).unwrap();

    // Oracle route: embed the depthwise kernels on the diagonal of a full
    // [C, C, kh, kw] kernel bank and run two generic convolutions.
    let mut diag = vec![0.0; c * c * 9];
    for ch in 0..c {
        for i in 0..9 {
            diag[(ch * c + ch) * 9 + i] = dw.data()[ch * 9 + i];
        }
    }
    let diag = Tensor::new(&[c, c, 3, 3], diag).unwrap();
    let mut tape2 = Tape::new();
    let mid2 = tape2.conv2d(&x, &diag, 2, 1).unwrap();
    let want = tape2.conv2d(&mid2, &pw, 1, 0).unwrap();

    assert_eq!(got.shape(), want.shape());
    assert!(got.max_abs_diff(&want) < 1e-12);
}

#[test]
fn transposed_conv_identity() {
    let mut r = rng(10);
    let x = random_tensor(&mut r, &[2, 3, 3]);
    let k = Tensor::new(&[2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let mut tape = Tape::new();
    let y = tape.transposed_conv2d(&x, &k, 1).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn transposed_conv_size_formula() {
    let x = Tensor::zeros(&[1, 4, 4]);
    let k = Tensor::zeros(&[1, 1, 4, 4]);
    let mut tape = Tape::new();
    let y = tape.transposed_conv2d(&x, &k, 4).unwrap();
    assert_eq!(y.shape(), &[1, 16, 16]);
}

#[test]
fn transposed_conv_gradient() {
    let mut r = rng(11);
    let x = random_tensor(&mut r, &[2, 3, 3]);
    let k = random_tensor(&mut r, &[2, 3, 2, 2]);
    let err = grad_check(
        |tape, inputs| {
            let y = tape.transposed_conv2d(&inputs[0], &inputs[1], 2)?;
            let sq = tape.mul(&y, &y)?;
            tape.sum_all(&sq)
        },
        &[x, k],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "max rel err {err}");
}

#[test]
fn depthwise_transposed_gradient() {
    let mut r = rng(12);
    let x = random_tensor(&mut r, &[3, 3, 4]);
    let k = random_tensor(&mut r, &[3, 3, 3]);
    let err = grad_check(
        |tape, inputs| {
            let y = tape.depthwise_transposed_conv2d(&inputs[0], &inputs[1], 2)?;
            let sq = tape.mul(&y, &y)?;
            tape.sum_all(&sq)
        },
        &[x, k],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "max rel err {err}");
}

#[test]
fn crop_gradient_zero_pads() {
    let mut r = rng(13);
    let x = random_tensor(&mut r, &[2, 5, 5]);
    let err = grad_check(
        |tape, inputs| {
            let y = tape.crop2d(&inputs[0], 1, 2, 3, 2)?;
            let sq = tape.mul(&y, &y)?;
            tape.sum_all(&sq)
        },
        &[x],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6);
}

#[test]
fn concat_basic_and_gradient() {
    let mut tape = Tape::new();
    let a = Tensor::new(&[1], vec![1.0]).unwrap();
    let b = Tensor::new(&[1], vec![2.0]).unwrap();
    let c = tape.concat(&[&a, &b], 0).unwrap();
    assert_eq!(c.data(), &[1.0, 2.0]);

    let mut r = rng(14);
    let x = random_tensor(&mut r, &[2, 3, 2]);
    let y = random_tensor(&mut r, &[3, 3, 2]);
    let err = grad_check(
        |tape, inputs| {
            let c = tape.concat(&[&inputs[0], &inputs[1]], 0)?;
            let sq = tape.mul(&c, &c)?;
            tape.sum_all(&sq)
        },
        &[x, y],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6);
}

#[test]
fn gather_rows_example() {
    let mut tape = Tape::new();
    let eye = Tensor::eye(3);
    let g = tape.gather_rows(&eye, &[2, 0]).unwrap();
    assert_eq!(g.shape(), &[2, 3]);
    assert_eq!(g.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
}

#[test]
fn gather_rows_out_of_range() {
    let mut tape = Tape::new();
    let eye = Tensor::eye(3);
    assert!(matches!(
        tape.gather_rows(&eye, &[3]),
        Err(Error::Index(_))
    ));
}

#[test]
fn gather_backward_accumulates_duplicates() {
    // Both gathered copies of row 1 contribute to its gradient.
    let mut r = rng(15);
    let x = random_tensor(&mut r, &[3, 2]);
    let weights = random_tensor(&mut r, &[3, 2]);
    let err = grad_check(
        |tape, inputs| {
            let g = tape.gather_rows(&inputs[0], &[1, 1, 2])?;
            let w = tape.mul(&g, &weights)?;
            tape.sum_all(&w)
        },
        &[x.clone()],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6);

    // Direct check: gradient of sum(gather(x, [1,1])) puts 2.0 on row 1.
    let mut tape = Tape::new();
    let p = tape.param(&x);
    let g = tape.gather_rows(&p, &[1, 1]).unwrap();
    let loss = tape.sum_all(&g).unwrap();
    let grads = tape.backward(&loss).unwrap();
    let gx = grads.wrt(&p).unwrap();
    assert_eq!(gx, &[0.0, 0.0, 2.0, 2.0, 0.0, 0.0]);
}

#[test]
fn scatter_rows_roundtrip_and_gradient() {
    let mut r = rng(16);
    let x = random_tensor(&mut r, &[4, 3]);
    let mut tape = Tape::new();
    let s = tape.scatter_rows(&x, &[2, 0, 3, 1], 5).unwrap();
    assert_eq!(s.shape(), &[5, 3]);
    // Row 4 untouched.
    assert_eq!(&s.data()[12..15], &[0.0, 0.0, 0.0]);

    let err = grad_check(
        |tape, inputs| {
            let s = tape.scatter_rows(&inputs[0], &[2, 0, 2, 1], 4)?;
            let sq = tape.mul(&s, &s)?;
            tape.sum_all(&sq)
        },
        &[x],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6);
}

#[test]
fn backward_sum_gives_ones() {
    let mut tape = Tape::new();
    let x = Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
    let p = tape.param(&x);
    let loss = tape.sum_all(&p).unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.wrt(&p).unwrap(), &[1.0; 6]);
}

#[test]
fn backward_quadratic() {
    let mut tape = Tape::new();
    let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
    let p = tape.param(&x);
    let sq = tape.mul(&p, &p).unwrap();
    let loss = tape.sum_all(&sq).unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.wrt(&p).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_requires_scalar_loss() {
    let mut tape = Tape::new();
    let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
    let p = tape.param(&x);
    let y = tape.mul(&p, &p).unwrap();
    assert!(matches!(tape.backward(&y), Err(Error::Contract(_))));
}

#[test]
fn grad_check_linear_is_machine_precision() {
    let mut r = rng(17);
    let x = random_tensor(&mut r, &[4]);
    let err = grad_check(
        |tape, inputs| {
            let y = tape.mul_scalar(&inputs[0], 3.0)?;
            tape.sum_all(&y)
        },
        &[x],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-9, "linear function should check out exactly: {err}");
}

#[test]
fn grad_check_softmax_composite() {
    let mut r = rng(18);
    let x = random_tensor(&mut r, &[3, 4]);
    let w = random_tensor(&mut r, &[4, 4]);
    let err = grad_check(
        |tape, inputs| {
            let h = tape.matmul(&inputs[0], &inputs[1])?;
            let s = tape.softmax(&h, 1)?;
            let sq = tape.mul(&s, &s)?;
            tape.sum_all(&sq)
        },
        &[x, w],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "max rel err {err}");
}

#[test]
fn relu_kink_excluded_from_checked_coordinates() {
    // x = [-1, 0, 2]: the coordinate sitting exactly on the ReLU kink is
    // excluded; the others verify fine.
    let x = Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
    let f = |tape: &mut Tape, inputs: &[Tensor]| {
        let y = tape.relu(&inputs[0])?;
        tape.sum_all(&y)
    };
    let err =
        grad_check_with_skip(f, std::slice::from_ref(&x), 1e-6, |_, ci| ci == 1).unwrap();
    assert!(err < 1e-9, "away from the kink ReLU is exact: {err}");
    // Including the kink coordinate shows why it must be excluded.
    let err_all = grad_check(f, &[x], 1e-6).unwrap();
    assert!(err_all > 0.1, "kink coordinate disagrees by ~0.5: {err_all}");
}

#[test]
fn softplus_abs_sqrt_gradients() {
    let mut r = rng(19);
    let base = random_tensor(&mut r, &[6]);
    // Keep |x| away from 0 for abs, and x > 0 for sqrt.
    let shifted: Vec<f64> = base.data().iter().map(|v| v + 2.5).collect();
    let pos = Tensor::new(&[6], shifted).unwrap();
    let err = grad_check(
        |tape, inputs| {
            let sp = tape.softplus(&inputs[0])?;
            let sq = tape.sqrt(&inputs[0])?;
            let ab = tape.abs(&inputs[0])?;
            let s1 = tape.add(&sp, &sq)?;
            let s2 = tape.add(&s1, &ab)?;
            tape.sum_all(&s2)
        },
        &[pos],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "max rel err {err}");
}

#[test]
fn max_all_routes_gradient_to_argmax() {
    let mut tape = Tape::new();
    let x = Tensor::new(&[4], vec![1.0, 5.0, 3.0, 5.0]).unwrap();
    let p = tape.param(&x);
    let m = tape.max_all(&p).unwrap();
    assert_eq!(m.item().unwrap(), 5.0);
    let grads = tape.backward(&m).unwrap();
    // First of the tied maxima receives the gradient.
    assert_eq!(grads.wrt(&p).unwrap(), &[0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn forward_stays_finite() {
    let mut r = rng(20);
    let x = random_tensor(&mut r, &[4, 4]);
    let mut tape = Tape::new();
    let s = tape.softmax(&x, 1).unwrap();
    let sp = tape.softplus(&s).unwrap();
    let m = tape.matmul(&sp, &x).unwrap();
    assert!(m.all_finite());
}

#[test]
fn tensors_from_other_tapes_rejected() {
    let mut t1 = Tape::new();
    let mut t2 = Tape::new();
    let x = Tensor::scalar(1.0);
    let p = t1.param(&x);
    assert!(matches!(t2.sum_all(&p), Err(Error::Contract(_))));
}

#[test]
fn backward_corruption_hook_breaks_matmul_gradient() {
    let mut r = rng(21);
    let a = random_tensor(&mut r, &[3, 3]);
    let b = random_tensor(&mut r, &[3, 3]);
    let err = grad_check(
        |tape, inputs| {
            tape.set_backward_corruption("matmul");
            let m = tape.matmul(&inputs[0], &inputs[1])?;
            tape.sum_all(&m)
        },
        &[a, b],
        1e-6,
    )
    .unwrap();
    assert!(err > 1e-4, "corrupted rule must be detectable: {err}");
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_shift_invariance(values in proptest::collection::vec(-50.0_f64..50.0, 2..8), shift in -100.0_f64..100.0) {
            let n = values.len();
            let x = Tensor::new(&[n], values.clone()).unwrap();
            let xs = Tensor::new(&[n], values.iter().map(|v| v + shift).collect()).unwrap();
            let mut tape = Tape::new();
            let a = tape.softmax(&x, 0).unwrap();
            let b = tape.softmax(&xs, 0).unwrap();
            let sum: f64 = a.data().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for (p, q) in a.data().iter().zip(b.data()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn reshape_transpose_roundtrip(r in 1_usize..5, c in 1_usize..5, seed in 0_u64..100) {
            let mut rg = rng(seed);
            let x = random_tensor(&mut rg, &[r, c]);
            let mut tape = Tape::new();
            let t = tape.transpose(&x).unwrap();
            let tt = tape.transpose(&t).unwrap();
            prop_assert_eq!(tt.data(), x.data());
            let flat = tape.reshape(&x, &[r * c]).unwrap();
            let back = tape.reshape(&flat, &[r, c]).unwrap();
            prop_assert_eq!(back.data(), x.data());
        }
    }
}

#[test]
fn shape_mismatch_rejected() {
    let err = Tensor::new(&[2, 3], vec![1.0; 5]).unwrap_err();
    assert!(matches!(err, Error::Dim(_)));
}

#[test]
fn eye_layout() {
    let e = Tensor::eye(3);
    assert_eq!(e.at2(0, 0), 1.0);
    assert_eq!(e.at2(1, 0), 0.0);
    assert_eq!(e.at2(2, 2), 1.0);
}

#[test]
fn detach_drops_linkage() {
    let t = Tensor::scalar(4.0);
    let mut tape = Tape::new();
    let p = tape.param(&t);
    assert!(p.node_id().is_some());
    let d = p.detach();
    assert!(d.node_id().is_none());
    assert!(!d.requires_grad());
    assert_eq!(d.data(), p.data());
}
