//! Direct 2D cross-correlation and its gradients.
//!
//! Layout: input `[H, W, Cin]`, kernel `[k, k, Cin, Cout]`, output `[H, W, Cout]`.
//! Stride 1, zero padding of `(k-1)/2`, so spatial size is preserved.
//!
//! The hot loops are monomorphized over the output channel count so the
//! per-pixel accumulator stays in registers; common widths dispatch to the
//! specialized kernels, everything else takes the dynamic fallback. The inner
//! loops avoid slice operations that would force the accumulator to memory.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fused multiply-add where the target has hardware FMA, plain mul+add
/// otherwise (the libm software fallback of `f64::mul_add` is far slower
/// than two rounded operations).
#[inline(always)]
fn fmadd(a: f64, b: f64, c: f64) -> f64 {
    #[cfg(target_feature = "fma")]
    {
        a.mul_add(b, c)
    }
    #[cfg(not(target_feature = "fma"))]
    {
        a * b + c
    }
}

fn check_conv_shapes(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let ishape = input.shape();
    if ishape.len() != 3 {
        return Err(Error::shape("conv2d", format!("input must be [H,W,Cin], got {ishape:?}")));
    }
    let kshape = kernel.shape();
    if kshape.len() != 4 || kshape[0] != kshape[1] {
        return Err(Error::shape("conv2d", format!("kernel must be [k,k,Cin,Cout], got {kshape:?}")));
    }
    let k = kshape[0];
    if k % 2 == 0 {
        return Err(Error::invalid("conv2d", format!("kernel size {k} must be odd")));
    }
    if kshape[2] != ishape[2] {
        return Err(Error::shape(
            "conv2d",
            format!("input has {} channels, kernel expects {}", ishape[2], kshape[2]),
        ));
    }
    let cout = kshape[3];
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?} does not match Cout={cout}", b.shape()),
            ));
        }
    }
    Ok((ishape[0], ishape[1], ishape[2], k, cout))
}

/// Forward kernel with a compile-time channel count.
fn conv2d_spec<const COUT: usize>(
    idata: &[f64],
    kdata: &[f64],
    bias: &[f64],
    odata: &mut [f64],
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
) {
    let pad = (k - 1) / 2;
    let mut bias_acc = [0.0f64; COUT];
    for (b, &v) in bias_acc.iter_mut().zip(bias) {
        *b = v;
    }
    for (i, orow) in odata.chunks_exact_mut(w * COUT).enumerate() {
        for (j, opx) in orow.chunks_exact_mut(COUT).enumerate() {
            let mut acc = bias_acc;
            for u in 0..k {
                let y = i + u;
                if y < pad || y >= h + pad {
                    continue;
                }
                let y = y - pad;
                for v in 0..k {
                    let x = j + v;
                    if x < pad || x >= w + pad {
                        continue;
                    }
                    let x = x - pad;
                    let base = (y * w + x) * cin;
                    let ipx = &idata[base..base + cin];
                    let kbase = (u * k + v) * cin * COUT;
                    let ktap = &kdata[kbase..kbase + cin * COUT];
                    for (&a, krow) in ipx.iter().zip(ktap.chunks_exact(COUT)) {
                        for c in 0..COUT {
                            acc[c] = fmadd(a, krow[c], acc[c]);
                        }
                    }
                }
            }
            for c in 0..COUT {
                opx[c] = acc[c];
            }
        }
    }
}

/// Dynamic-width fallback for channel counts without a specialization.
fn conv2d_dyn(
    idata: &[f64],
    kdata: &[f64],
    bias: &[f64],
    odata: &mut [f64],
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    cout: usize,
) {
    let pad = (k - 1) / 2;
    for px in odata.chunks_exact_mut(cout) {
        px.copy_from_slice(bias);
    }
    for i in 0..h {
        for u in 0..k {
            let y = i + u;
            if y < pad || y >= h + pad {
                continue;
            }
            let y = y - pad;
            let irow = &idata[y * w * cin..(y + 1) * w * cin];
            for j in 0..w {
                let orow = &mut odata[(i * w + j) * cout..(i * w + j + 1) * cout];
                for v in 0..k {
                    let x = j + v;
                    if x < pad || x >= w + pad {
                        continue;
                    }
                    let x = x - pad;
                    let ipx = &irow[x * cin..x * cin + cin];
                    let kbase = (u * k + v) * cin * cout;
                    for (ci, &a) in ipx.iter().enumerate() {
                        let krow = &kdata[kbase + ci * cout..kbase + (ci + 1) * cout];
                        for (o, &kv) in orow.iter_mut().zip(krow) {
                            *o = fmadd(a, kv, *o);
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_dispatch(
    idata: &[f64],
    kdata: &[f64],
    bias: &[f64],
    odata: &mut [f64],
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    cout: usize,
) {
    match cout {
        2 => conv2d_spec::<2>(idata, kdata, bias, odata, h, w, cin, k),
        3 => conv2d_spec::<3>(idata, kdata, bias, odata, h, w, cin, k),
        4 => conv2d_spec::<4>(idata, kdata, bias, odata, h, w, cin, k),
        6 => conv2d_spec::<6>(idata, kdata, bias, odata, h, w, cin, k),
        8 => conv2d_spec::<8>(idata, kdata, bias, odata, h, w, cin, k),
        16 => conv2d_spec::<16>(idata, kdata, bias, odata, h, w, cin, k),
        32 => conv2d_spec::<32>(idata, kdata, bias, odata, h, w, cin, k),
        _ => conv2d_dyn(idata, kdata, bias, odata, h, w, cin, k, cout),
    }
}

/// Cross-correlation plus bias: `out[i,j,co] = b[co] + sum_{u,v,ci} in[i+u-p, j+v-p, ci] * k[u,v,ci,co]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (h, w, cin, k, cout) = check_conv_shapes(input, kernel, Some(bias))?;
    let mut out = Tensor::zeros(&[h, w, cout]);
    conv2d_dispatch(input.data(), kernel.data(), bias.data(), out.data_mut(), h, w, cin, k, cout);
    Ok(out)
}

/// Kernel-gradient loop: `dK[u,v,ci,co] = sum_{i,j} in[i+u-p, j+v-p, ci] * g[i,j,co]`.
///
/// Runs one accumulation line per `(row, tap, in-channel)` so the partial sum
/// stays in registers for a whole row of gradient pixels.
fn dkernel_spec<const COUT: usize>(
    idata: &[f64],
    gdata: &[f64],
    dk: &mut [f64],
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
) {
    let pad = (k - 1) / 2;
    for i in 0..h {
        let grow = &gdata[i * w * COUT..(i + 1) * w * COUT];
        for u in 0..k {
            let y = i + u;
            if y < pad || y >= h + pad {
                continue;
            }
            let y = y - pad;
            let irow = &idata[y * w * cin..(y + 1) * w * cin];
            for v in 0..k {
                // valid output columns j with x = j + v - pad inside the image
                let j0 = pad.saturating_sub(v);
                let j1 = (w + pad - v).min(w);
                if j0 >= j1 {
                    continue;
                }
                let x0 = j0 + v - pad;
                let gline = &grow[j0 * COUT..j1 * COUT];
                for ci in 0..cin {
                    let mut acc = [0.0f64; COUT];
                    let ivals = irow[x0 * cin + ci..].iter().step_by(cin);
                    for (&a, gpx) in ivals.zip(gline.chunks_exact(COUT)) {
                        for c in 0..COUT {
                            acc[c] = fmadd(a, gpx[c], acc[c]);
                        }
                    }
                    let row = ((u * k + v) * cin + ci) * COUT;
                    let drow = &mut dk[row..row + COUT];
                    for c in 0..COUT {
                        drow[c] += acc[c];
                    }
                }
            }
        }
    }
}

fn dkernel_dyn(idata: &[f64], gdata: &[f64], dk: &mut [f64], h: usize, w: usize, cin: usize, k: usize, cout: usize) {
    let pad = (k - 1) / 2;
    for i in 0..h {
        for j in 0..w {
            let grow = &gdata[(i * w + j) * cout..(i * w + j + 1) * cout];
            for u in 0..k {
                let y = i + u;
                if y < pad || y >= h + pad {
                    continue;
                }
                let y = y - pad;
                for v in 0..k {
                    let x = j + v;
                    if x < pad || x >= w + pad {
                        continue;
                    }
                    let x = x - pad;
                    let ipx = &idata[(y * w + x) * cin..(y * w + x + 1) * cin];
                    let kbase = (u * k + v) * cin * cout;
                    for (ci, &a) in ipx.iter().enumerate() {
                        let drow = &mut dk[kbase + ci * cout..kbase + (ci + 1) * cout];
                        for (d, &g) in drow.iter_mut().zip(grow) {
                            *d = fmadd(a, g, *d);
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of `conv2d` w.r.t. kernel, bias, and (optionally) the input.
///
/// `upstream` is `dL/dout` with shape `[H, W, Cout]`. Set `need_input_grad`
/// to `false` for the first layer to skip the unused input gradient.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    upstream: &Tensor,
    need_input_grad: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let (h, w, cin, k, cout) = check_conv_shapes(input, kernel, None)?;
    if upstream.shape() != [h, w, cout] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("upstream shape {:?}, expected [{h}, {w}, {cout}]", upstream.shape()),
        ));
    }

    let mut dbias = Tensor::zeros(&[cout]);
    {
        let db = dbias.data_mut();
        for grow in upstream.data().chunks_exact(cout) {
            for (d, &g) in db.iter_mut().zip(grow) {
                *d += g;
            }
        }
    }

    let mut dkernel = Tensor::zeros(&[k, k, cin, cout]);
    match cout {
        2 => dkernel_spec::<2>(input.data(), upstream.data(), dkernel.data_mut(), h, w, cin, k),
        3 => dkernel_spec::<3>(input.data(), upstream.data(), dkernel.data_mut(), h, w, cin, k),
        4 => dkernel_spec::<4>(input.data(), upstream.data(), dkernel.data_mut(), h, w, cin, k),
        6 => dkernel_spec::<6>(input.data(), upstream.data(), dkernel.data_mut(), h, w, cin, k),
        8 => dkernel_spec::<8>(input.data(), upstream.data(), dkernel.data_mut(), h, w, cin, k),
        16 => dkernel_spec::<16>(input.data(), upstream.data(), dkernel.data_mut(), h, w, cin, k),
        32 => dkernel_spec::<32>(input.data(), upstream.data(), dkernel.data_mut(), h, w, cin, k),
        _ => dkernel_dyn(input.data(), upstream.data(), dkernel.data_mut(), h, w, cin, k, cout),
    }

    // dX is a cross-correlation of the upstream gradient with the kernel
    // flipped spatially and transposed in its channel axes, which reuses the
    // fast forward path: dX[y,x,ci] = sum_{u,v,co} k[u,v,ci,co] * g[y-u+p, x-v+p, co].
    let dinput = if need_input_grad {
        let mut kt = Tensor::zeros(&[k, k, cout, cin]);
        {
            let ktd = kt.data_mut();
            let kd = kernel.data();
            for u in 0..k {
                for v in 0..k {
                    for ci in 0..cin {
                        for co in 0..cout {
                            ktd[((k - 1 - u) * k + (k - 1 - v)) * cout * cin + co * cin + ci] =
                                kd[(u * k + v) * cin * cout + ci * cout + co];
                        }
                    }
                }
            }
        }
        let mut dx = Tensor::zeros(&[h, w, cin]);
        let zero_bias = vec![0.0; cin];
        conv2d_dispatch(upstream.data(), kt.data(), &zero_bias, dx.data_mut(), h, w, cout, k, cin);
        Some(dx)
    } else {
        None
    };

    Ok((dinput, dkernel, dbias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent quadruple-loop direct-summation oracle for conv2d.
    fn conv2d_oracle(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Tensor {
        let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (k, cout) = (kernel.shape()[0], kernel.shape()[3]);
        let pad = (k - 1) / 2;
        let mut out = Tensor::zeros(&[h, w, cout]);
        for i in 0..h {
            for j in 0..w {
                for co in 0..cout {
                    let mut acc = bias.data()[co];
                    for u in 0..k {
                        for v in 0..k {
                            let y = i as isize + u as isize - pad as isize;
                            let x = j as isize + v as isize - pad as isize;
                            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                acc += input.at3(y as usize, x as usize, ci)
                                    * kernel.data()[((u * k + v) * cin + ci) * cout + co];
                            }
                        }
                    }
                    *out.at3_mut(i, j, co) = acc;
                }
            }
        }
        out
    }

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let len: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_1x1_kernel() {
        let input = Tensor::from_vec(&[2, 3, 1], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let kernel = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let bias = Tensor::zeros(&[1]);
        let out = conv2d(&input, &kernel, &bias).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn zero_kernel_yields_constant_bias() {
        let input = Tensor::full(&[4, 4, 2], 0.7);
        let kernel = Tensor::zeros(&[3, 3, 2, 3]);
        let bias = Tensor::from_vec(&[3], vec![1.5, -0.5, 0.0]).unwrap();
        let out = conv2d(&input, &kernel, &bias).unwrap();
        for px in out.data().chunks_exact(3) {
            assert_eq!(px, &[1.5, -0.5, 0.0]);
        }
    }

    #[test]
    fn matches_direct_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let input = random_tensor(&mut rng, &[5, 5, 2]);
        let kernel = random_tensor(&mut rng, &[3, 3, 2, 1]);
        let bias = random_tensor(&mut rng, &[1]);
        let got = conv2d(&input, &kernel, &bias).unwrap();
        let want = conv2d_oracle(&input, &kernel, &bias);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-10, "got {g}, oracle {w}");
        }
    }

    #[test]
    fn oracle_agreement_on_varied_shapes() {
        // covers both specialized and fallback channel widths
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(h, w, cin, k, cout) in &[
            (4, 7, 3, 3, 5),
            (6, 6, 1, 5, 2),
            (3, 3, 4, 1, 4),
            (5, 4, 2, 3, 16),
            (8, 3, 16, 3, 6),
            (4, 4, 3, 3, 7),
        ] {
            let input = random_tensor(&mut rng, &[h, w, cin]);
            let kernel = random_tensor(&mut rng, &[k, k, cin, cout]);
            let bias = random_tensor(&mut rng, &[cout]);
            let got = conv2d(&input, &kernel, &bias).unwrap();
            let want = conv2d_oracle(&input, &kernel, &bias);
            for (g, want) in got.data().iter().zip(want.data()) {
                assert!((g - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let input = Tensor::zeros(&[4, 4, 2]);
        let kernel = Tensor::zeros(&[3, 3, 3, 1]);
        let bias = Tensor::zeros(&[1]);
        assert!(conv2d(&input, &kernel, &bias).is_err());
    }

    #[test]
    fn rejects_even_kernel() {
        let input = Tensor::zeros(&[4, 4, 1]);
        let kernel = Tensor::zeros(&[2, 2, 1, 1]);
        let bias = Tensor::zeros(&[1]);
        assert!(conv2d(&input, &kernel, &bias).is_err());
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random_tensor(&mut rng, &[4, 4, 2]);
        let kernel = random_tensor(&mut rng, &[3, 3, 2, 3]);
        let upstream = Tensor::zeros(&[4, 4, 3]);
        let (dx, dk, db) = conv2d_backward(&input, &kernel, &upstream, true).unwrap();
        assert!(dx.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(dk.data().iter().all(|&v| v == 0.0));
        assert!(db.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = random_tensor(&mut rng, &[5, 4, 2]);
        let kernel = random_tensor(&mut rng, &[3, 3, 2, 2]);
        let upstream = random_tensor(&mut rng, &[5, 4, 2]);
        let mut doubled = upstream.clone();
        doubled.scale(2.0);
        let (dx1, dk1, db1) = conv2d_backward(&input, &kernel, &upstream, true).unwrap();
        let (dx2, dk2, db2) = conv2d_backward(&input, &kernel, &doubled, true).unwrap();
        for (a, b) in dx1.unwrap().data().iter().zip(dx2.unwrap().data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        for (a, b) in dk1.data().iter().zip(dk2.data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        for (a, b) in db1.data().iter().zip(db2.data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    /// Brute-force gradient oracle: perturb one element at a time through the
    /// scalar objective `sum(conv2d(..) * weights)` via central differences.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(h, w, cin, k, cout) in &[(5, 5, 2, 3, 3), (4, 6, 3, 3, 16), (6, 4, 16, 3, 6)] {
            let input = random_tensor(&mut rng, &[h, w, cin]);
            let kernel = random_tensor(&mut rng, &[k, k, cin, cout]);
            let bias = random_tensor(&mut rng, &[cout]);
            let weights = random_tensor(&mut rng, &[h, w, cout]);
            let objective = |inp: &Tensor, ker: &Tensor, b: &Tensor| -> f64 {
                conv2d(inp, ker, b)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(weights.data())
                    .map(|(o, wt)| o * wt)
                    .sum()
            };
            let (dx, dk, db) = conv2d_backward(&input, &kernel, &weights, true).unwrap();
            let dx = dx.unwrap();
            let eps = 1e-6;
            let check = |analytic: f64, plus: f64, minus: f64| {
                let numeric = (plus - minus) / (2.0 * eps);
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    ((analytic - numeric) / denom).abs() < 1e-6,
                    "analytic {analytic} vs numeric {numeric}"
                );
            };
            for idx in (0..input.len()).step_by(7) {
                let mut p = input.clone();
                p.data_mut()[idx] += eps;
                let mut m = input.clone();
                m.data_mut()[idx] -= eps;
                check(dx.data()[idx], objective(&p, &kernel, &bias), objective(&m, &kernel, &bias));
            }
            for idx in (0..kernel.len()).step_by(11) {
                let mut p = kernel.clone();
                p.data_mut()[idx] += eps;
                let mut m = kernel.clone();
                m.data_mut()[idx] -= eps;
                check(dk.data()[idx], objective(&input, &p, &bias), objective(&input, &m, &bias));
            }
            for idx in 0..bias.len() {
                let mut p = bias.clone();
                p.data_mut()[idx] += eps;
                let mut m = bias.clone();
                m.data_mut()[idx] -= eps;
                check(db.data()[idx], objective(&input, &kernel, &p), objective(&input, &kernel, &m));
            }
        }
    }
}
