//! Forward and backward kernels for the layer ops the generator needs.
//!
//! All kernels are pure functions: no shared state, deterministic, safe to
//! call concurrently on read-only inputs.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Output extent of a transposed convolution along one axis.
/// H' = (H - 1) * stride - 2 * padding + K.
pub fn conv_transpose_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> i64 {
    (input as i64 - 1) * stride as i64 - 2 * padding as i64 + kernel as i64
}

fn check_conv_args(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    let ishape = input.shape();
    let kshape = kernel.shape();
    if ishape.len() != 3 || kshape.len() != 4 || kshape[2] != kshape[3] {
        return Err(Error::ShapeMismatch {
            op: "conv_transpose2d",
            expected: "input [Cin x H x W], kernel [Cin x Cout x K x K]".into(),
            got: format!("input {}, kernel {}", input.shape_str(), kernel.shape_str()),
        });
    }
    let (cin, h, w) = (ishape[0], ishape[1], ishape[2]);
    let (kcin, cout, k) = (kshape[0], kshape[1], kshape[2]);
    if cin != kcin {
        return Err(Error::ChannelMismatch {
            input_channels: cin,
            kernel_channels: kcin,
            input_shape: input.shape_str(),
            kernel_shape: kernel.shape_str(),
        });
    }
    if bias.shape() != [cout] {
        return Err(Error::ShapeMismatch {
            op: "conv_transpose2d",
            expected: format!("bias [{cout}]"),
            got: bias.shape_str(),
        });
    }
    if stride == 0 {
        return Err(Error::InvalidConfig("conv_transpose2d: stride must be positive".into()));
    }
    let oh = conv_transpose_extent(h, k, stride, padding);
    let ow = conv_transpose_extent(w, k, stride, padding);
    if oh < 1 || ow < 1 {
        return Err(Error::DegenerateOutput {
            op: "conv_transpose2d",
            extent: oh.min(ow),
            input: h.min(w),
            kernel: k,
            stride,
            padding,
        });
    }
    Ok((cin, cout, h, w, k, oh as usize, ow as usize))
}

/// Transposed 2-D convolution (scatter-accumulate semantics).
///
/// Each input pixel scatters `input * kernel` into the output window whose
/// top-left corner is `(ih * stride - padding, iw * stride - padding)`;
/// contributions landing outside the output are dropped, and every output
/// channel is offset by its bias.
pub fn conv_transpose2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (cin, cout, h, w, k, oh, ow) = check_conv_args(input, kernel, bias, stride, padding)?;
    let x = input.data();
    let kd = kernel.data();
    let mut out = vec![0.0f64; cout * oh * ow];

    for co in 0..cout {
        let b = bias.data()[co];
        for v in &mut out[co * oh * ow..(co + 1) * oh * ow] {
            *v = b;
        }
    }
    for ci in 0..cin {
        for ih in 0..h {
            for iw in 0..w {
                let v = x[(ci * h + ih) * w + iw];
                if v == 0.0 {
                    continue;
                }
                let base_oh = ih as i64 * stride as i64 - padding as i64;
                let base_ow = iw as i64 * stride as i64 - padding as i64;
                for co in 0..cout {
                    let kbase = ((ci * cout + co) * k) * k;
                    let obase = co * oh * ow;
                    for kh in 0..k {
                        let orow = base_oh + kh as i64;
                        if orow < 0 || orow >= oh as i64 {
                            continue;
                        }
                        for kw in 0..k {
                            let ocol = base_ow + kw as i64;
                            if ocol < 0 || ocol >= ow as i64 {
                                continue;
                            }
                            out[obase + orow as usize * ow + ocol as usize] +=
                                v * kd[kbase + kh * k + kw];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[cout, oh, ow], out)
}

/// Gradients of `conv_transpose2d` with respect to input, kernel and bias.
pub fn conv_transpose2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> (Tensor, Tensor, Tensor) {
    let ishape = input.shape();
    let kshape = kernel.shape();
    let (cin, h, w) = (ishape[0], ishape[1], ishape[2]);
    let (cout, k) = (kshape[1], kshape[2]);
    let oshape = grad_out.shape();
    let (oh, ow) = (oshape[1], oshape[2]);
    let x = input.data();
    let kd = kernel.data();
    let go = grad_out.data();

    let mut d_input = vec![0.0f64; cin * h * w];
    let mut d_kernel = vec![0.0f64; cin * cout * k * k];
    let mut d_bias = vec![0.0f64; cout];

    for co in 0..cout {
        d_bias[co] = go[co * oh * ow..(co + 1) * oh * ow].iter().sum();
    }
    for ci in 0..cin {
        for ih in 0..h {
            for iw in 0..w {
                let xv = x[(ci * h + ih) * w + iw];
                let base_oh = ih as i64 * stride as i64 - padding as i64;
                let base_ow = iw as i64 * stride as i64 - padding as i64;
                let mut dx = 0.0;
                for co in 0..cout {
                    let kbase = ((ci * cout + co) * k) * k;
                    let obase = co * oh * ow;
                    for kh in 0..k {
                        let orow = base_oh + kh as i64;
                        if orow < 0 || orow >= oh as i64 {
                            continue;
                        }
                        for kw in 0..k {
                            let ocol = base_ow + kw as i64;
                            if ocol < 0 || ocol >= ow as i64 {
                                continue;
                            }
                            let g = go[obase + orow as usize * ow + ocol as usize];
                            dx += g * kd[kbase + kh * k + kw];
                            d_kernel[kbase + kh * k + kw] += g * xv;
                        }
                    }
                }
                d_input[(ci * h + ih) * w + iw] = dx;
            }
        }
    }
    (
        Tensor::from_vec(&[cin, h, w], d_input).unwrap(),
        Tensor::from_vec(&[cin, cout, k, k], d_kernel).unwrap(),
        Tensor::from_vec(&[cout], d_bias).unwrap(),
    )
}

/// Fully connected layer: out[j] = sum_k weight[j,k] * input[k] + bias[j].
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let wshape = weight.shape();
    if wshape.len() != 2 || input.shape().len() != 1 || input.shape()[0] != wshape[1] {
        return Err(Error::ShapeMismatch {
            op: "dense",
            expected: format!("input [{}] for weight {}", wshape.last().unwrap_or(&0), weight.shape_str()),
            got: input.shape_str(),
        });
    }
    let (m, n) = (wshape[0], wshape[1]);
    if bias.shape() != [m] {
        return Err(Error::ShapeMismatch {
            op: "dense",
            expected: format!("bias [{m}]"),
            got: bias.shape_str(),
        });
    }
    let x = input.data();
    let wd = weight.data();
    let mut out = bias.data().to_vec();
    for j in 0..m {
        let row = &wd[j * n..(j + 1) * n];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x.iter()) {
            acc += wv * xv;
        }
        out[j] += acc;
    }
    Tensor::from_vec(&[m], out)
}

/// Gradients of `dense` with respect to input, weight and bias.
pub fn dense_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (m, n) = (weight.shape()[0], weight.shape()[1]);
    let x = input.data();
    let wd = weight.data();
    let go = grad_out.data();
    let mut d_input = vec![0.0f64; n];
    let mut d_weight = vec![0.0f64; m * n];
    for j in 0..m {
        let g = go[j];
        let row = &wd[j * n..(j + 1) * n];
        let drow = &mut d_weight[j * n..(j + 1) * n];
        for kk in 0..n {
            d_input[kk] += g * row[kk];
            drow[kk] = g * x[kk];
        }
    }
    (
        Tensor::from_vec(&[n], d_input).unwrap(),
        Tensor::from_vec(&[m, n], d_weight).unwrap(),
        Tensor::vector(go),
    )
}

/// Elementwise max(0, x).
pub fn relu(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(t.shape(), data).unwrap()
}

/// Gradient of relu; the subgradient at 0 is taken as 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data).unwrap()
}

/// Elementwise hyperbolic tangent; output strictly within (-1, 1).
pub fn tanh(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|&v| v.tanh()).collect();
    Tensor::from_vec(t.shape(), data).unwrap()
}

/// Gradient of tanh expressed through the forward output: 1 - y^2.
pub fn tanh_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * (1.0 - y * y))
        .collect();
    Tensor::from_vec(output.shape(), data).unwrap()
}

/// Mean absolute difference over all elements.
pub fn l1_loss(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "l1_loss",
            expected: a.shape_str(),
            got: b.shape_str(),
        });
    }
    let n = a.numel() as f64;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs())
        .sum();
    Ok(sum / n)
}

/// Gradients of `l1_loss` with respect to both arguments.
/// The subgradient of |x| at 0 is taken as 0.
pub fn l1_loss_backward(a: &Tensor, b: &Tensor, grad_out: f64) -> (Tensor, Tensor) {
    let n = a.numel() as f64;
    let scale = grad_out / n;
    let mut d_a = vec![0.0f64; a.numel()];
    let mut d_b = vec![0.0f64; a.numel()];
    for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        let s = if x > y {
            scale
        } else if x < y {
            -scale
        } else {
            0.0
        };
        d_a[i] = s;
        d_b[i] = -s;
    }
    (
        Tensor::from_vec(a.shape(), d_a).unwrap(),
        Tensor::from_vec(b.shape(), d_b).unwrap(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    // Gather-form transposed convolution, only used to cross-check the
    // scatter implementation: walks output pixels and collects every
    // (ih, kh) pair with oh = ih*stride - pad + kh.
    fn conv_transpose2d_gather(
        input: &Tensor,
        kernel: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Tensor {
        let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (cout, k) = (kernel.shape()[1], kernel.shape()[2]);
        let oh = conv_transpose_extent(h, k, stride, padding) as usize;
        let ow = conv_transpose_extent(w, k, stride, padding) as usize;
        let mut out = Tensor::zeros(&[cout, oh, ow]);
        for co in 0..cout {
            for orow in 0..oh {
                for ocol in 0..ow {
                    let mut acc = bias.data()[co];
                    for ci in 0..cin {
                        for ih in 0..h {
                            for iw in 0..w {
                                for kh in 0..k {
                                    for kw in 0..k {
                                        let r = ih as i64 * stride as i64 - padding as i64
                                            + kh as i64;
                                        let c = iw as i64 * stride as i64 - padding as i64
                                            + kw as i64;
                                        if r == orow as i64 && c == ocol as i64 {
                                            acc += input.data()[(ci * h + ih) * w + iw]
                                                * kernel.data()[((ci * cout + co) * k + kh) * k
                                                    + kw];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    out.data_mut()[(co * oh + orow) * ow + ocol] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_transpose_single_pixel_scatter() {
        let input = Tensor::from_vec(&[1, 1, 1], vec![2.0]).unwrap();
        let kernel = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let bias = Tensor::vector(&[0.0]);
        let out = conv_transpose2d(&input, &kernel, &bias, 2, 0).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[2.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn conv_transpose_zero_input_gives_bias() {
        let input = Tensor::zeros(&[2, 3, 3]);
        let kernel = Tensor::from_vec(&[2, 2, 2, 2], (0..16).map(|i| i as f64).collect()).unwrap();
        let bias = Tensor::vector(&[0.5, -1.5]);
        let out = conv_transpose2d(&input, &kernel, &bias, 2, 0).unwrap();
        let (oh, ow) = (out.shape()[1], out.shape()[2]);
        for co in 0..2 {
            for &v in &out.data()[co * oh * ow..(co + 1) * oh * ow] {
                assert_eq!(v, bias.data()[co]);
            }
        }
    }

    #[test]
    fn conv_transpose_overlapping_scatter_matches_gather_oracle() {
        let input = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let kernel = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let bias = Tensor::vector(&[0.0]);
        let out = conv_transpose2d(&input, &kernel, &bias, 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3]);
        assert_eq!(
            out.data(),
            &[1.0, 3.0, 2.0, 4.0, 10.0, 6.0, 3.0, 7.0, 4.0]
        );
        let oracle = conv_transpose2d_gather(&input, &kernel, &bias, 1, 0);
        assert_eq!(out.data(), oracle.data());
    }

    #[test]
    fn conv_transpose_matches_gather_oracle_with_stride_and_padding() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for &(cin, cout, h, k, stride, pad) in
            &[(2, 3, 3, 4, 2, 1), (1, 2, 4, 3, 1, 0), (3, 1, 2, 4, 2, 1), (2, 2, 3, 2, 3, 0)]
        {
            let input = Tensor::from_vec(
                &[cin, h, h],
                (0..cin * h * h).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let kernel = Tensor::from_vec(
                &[cin, cout, k, k],
                (0..cin * cout * k * k).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let bias = Tensor::from_vec(
                &[cout],
                (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let got = conv_transpose2d(&input, &kernel, &bias, stride, pad).unwrap();
            let oracle = conv_transpose2d_gather(&input, &kernel, &bias, stride, pad);
            assert_eq!(got.shape(), oracle.shape());
            for (a, b) in got.data().iter().zip(oracle.data()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_transpose_rejects_channel_mismatch() {
        let input = Tensor::zeros(&[3, 2, 2]);
        let kernel = Tensor::zeros(&[2, 1, 2, 2]);
        let bias = Tensor::vector(&[0.0]);
        let err = conv_transpose2d(&input, &kernel, &bias, 1, 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[3x2x2]") && msg.contains("[2x1x2x2]"), "{msg}");
    }

    #[test]
    fn conv_transpose_linear_in_input_with_zero_bias() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let kernel = Tensor::from_vec(
            &[2, 2, 3, 3],
            (0..36).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let bias = Tensor::zeros(&[2]);
        let x = Tensor::from_vec(&[2, 3, 3], (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = Tensor::from_vec(&[2, 3, 3], (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (alpha, beta) = (0.7, -1.3);
        let mixed = Tensor::from_vec(
            &[2, 3, 3],
            x.data().iter().zip(y.data()).map(|(a, b)| alpha * a + beta * b).collect(),
        )
        .unwrap();
        let f_mixed = conv_transpose2d(&mixed, &kernel, &bias, 2, 1).unwrap();
        let fx = conv_transpose2d(&x, &kernel, &bias, 2, 1).unwrap();
        let fy = conv_transpose2d(&y, &kernel, &bias, 2, 1).unwrap();
        for ((m, a), b) in f_mixed.data().iter().zip(fx.data()).zip(fy.data()) {
            assert!((m - (alpha * a + beta * b)).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_identity_and_zero_weight() {
        let id = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let zero_bias = Tensor::zeros(&[2]);
        let x = Tensor::vector(&[3.0, -1.0]);
        assert_eq!(dense(&x, &id, &zero_bias).unwrap().data(), &[3.0, -1.0]);

        let zeros = Tensor::zeros(&[2, 2]);
        let bias = Tensor::vector(&[5.0, 5.0]);
        assert_eq!(dense(&x, &zeros, &bias).unwrap().data(), &[5.0, 5.0]);
    }

    #[test]
    fn dense_small_arithmetic() {
        // [[1,2],[3,4]] * [1,1] + [1,0] = [1+2+1, 3+4+0] = [4, 7]
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::vector(&[1.0, 0.0]);
        let x = Tensor::vector(&[1.0, 1.0]);
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[4.0, 7.0]);
    }

    #[test]
    fn dense_rejects_dimension_mismatch() {
        let w = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2]);
        let x = Tensor::vector(&[1.0, 2.0]);
        assert!(dense(&x, &w, &b).is_err());
    }

    #[test]
    fn relu_and_tanh_values() {
        let t = Tensor::vector(&[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(tanh(&Tensor::vector(&[0.0])).data(), &[0.0]);
        let y = tanh(&Tensor::vector(&[1.0]));
        assert!((y.data()[0] - 0.761594).abs() < 1e-6);
    }

    #[test]
    fn l1_loss_values() {
        let a = Tensor::vector(&[1.0, 0.0]);
        let b = Tensor::vector(&[0.0, 0.0]);
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(l1_loss(&a, &b).unwrap(), 0.5);
        let a = Tensor::vector(&[1.0, -1.0, 3.0]);
        let b = Tensor::vector(&[0.0, 1.0, 1.0]);
        assert!((l1_loss(&a, &b).unwrap() - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn l1_loss_rejects_shape_mismatch() {
        let a = Tensor::vector(&[1.0, 2.0]);
        let b = Tensor::vector(&[1.0, 2.0, 3.0]);
        assert!(l1_loss(&a, &b).is_err());
    }

    #[test]
    fn l1_subgradient_at_zero_is_zero() {
        let a = Tensor::vector(&[2.0, 1.0, -3.0]);
        let (da, db) = l1_loss_backward(&a, &a, 1.0);
        assert!(da.data().iter().all(|&v| v == 0.0));
        assert!(db.data().iter().all(|&v| v == 0.0));
    }
}
