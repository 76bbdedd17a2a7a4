//! Primitive forward and backward kernels.
//!
//! Convolutions are 3×3, stride 1, zero padding 1. Backward functions take
//! the forward inputs (and, for activations, the forward output) plus the
//! upstream gradient and return gradients w.r.t. every input.

use super::tensor::Tensor4;
use crate::error::{Error, Result};

fn same_shape(a: &Tensor4, b: &Tensor4, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn check_conv(x: &Tensor4, weight: &Tensor4, bias: Option<&Tensor4>) -> Result<()> {
    let [_, cin, _, _] = x.shape();
    let [cout, wcin, kh, kw] = weight.shape();
    if kh != 3 || kw != 3 {
        return Err(Error::Shape(format!("kernel must be 3x3, got {kh}x{kw}")));
    }
    if wcin != cin {
        return Err(Error::Shape(format!(
            "conv expects {wcin} input channels, got {cin}"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [1, cout, 1, 1] {
            return Err(Error::Shape(format!("bias shape {:?} for {cout} outputs", b.shape())));
        }
    }
    Ok(())
}

/// Row and column ranges of the output that read valid input for tap offset `d`.
#[inline]
fn tap_range(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d.max(0)) as usize;
    (lo, hi.max(lo))
}

/// Unfolds one `cin × h × w` item into a `(cin·9) × (h·w)` patch matrix with
/// zero padding.
fn im2col(src: &[f64], cin: usize, h: usize, w: usize, col: &mut [f64]) {
    let n = h * w;
    for ic in 0..cin {
        let plane = &src[ic * n..(ic + 1) * n];
        for t in 0..9 {
            let (dy, dx) = (t as isize / 3 - 1, t as isize % 3 - 1);
            let (y0, y1) = tap_range(h, dy);
            let (x0, x1) = tap_range(w, dx);
            let row = &mut col[(ic * 9 + t) * n..(ic * 9 + t + 1) * n];
            row[..y0 * w].fill(0.0);
            row[y1 * w..].fill(0.0);
            for y in y0..y1 {
                let r = &mut row[y * w..(y + 1) * w];
                r[..x0].fill(0.0);
                r[x1..].fill(0.0);
                let so = (y as isize + dy) as usize * w + (x0 as isize + dx) as usize;
                r[x0..x1].copy_from_slice(&plane[so..so + (x1 - x0)]);
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates a patch matrix back into an item.
fn col2im(col: &[f64], cin: usize, h: usize, w: usize, dst: &mut [f64]) {
    let n = h * w;
    for ic in 0..cin {
        let plane = &mut dst[ic * n..(ic + 1) * n];
        for t in 0..9 {
            let (dy, dx) = (t as isize / 3 - 1, t as isize % 3 - 1);
            let (y0, y1) = tap_range(h, dy);
            let (x0, x1) = tap_range(w, dx);
            let row = &col[(ic * 9 + t) * n..(ic * 9 + t + 1) * n];
            for y in y0..y1 {
                let so = (y as isize + dy) as usize * w + (x0 as isize + dx) as usize;
                for (d, s) in plane[so..so + (x1 - x0)].iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                    *d += s;
                }
            }
        }
    }
}

/// `c (m×n) = alpha·op(a)·op(b) + beta·c` on row-major slices, where
/// `op` optionally transposes.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // row-major blocks whose lengths are checked by the callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Same-size 3×3 cross-correlation.
pub fn conv2d(x: &Tensor4, weight: &Tensor4, bias: Option<&Tensor4>) -> Result<Tensor4> {
    check_conv(x, weight, bias)?;
    let [b, cin, h, w] = x.shape();
    let cout = weight.shape()[0];
    let n = h * w;
    let mut out = Tensor4::zeros([b, cout, h, w]);
    let mut col = vec![0.0; cin * 9 * n];
    for bi in 0..b {
        im2col(&x.data()[bi * cin * n..(bi + 1) * cin * n], cin, h, w, &mut col);
        let o = &mut out.data_mut()[bi * cout * n..(bi + 1) * cout * n];
        if let Some(bias) = bias {
            for (oc, plane) in o.chunks_exact_mut(n).enumerate() {
                plane.fill(bias.data()[oc]);
            }
        }
        gemm(cout, cin * 9, n, weight.data(), false, &col, false, 1.0, o);
    }
    Ok(out)
}

/// Gradients of [`conv2d`] w.r.t. input, weight and bias.
pub fn conv2d_backward(
    x: &Tensor4,
    weight: &Tensor4,
    has_bias: bool,
    grad_out: &Tensor4,
) -> Result<(Tensor4, Tensor4, Option<Tensor4>)> {
    check_conv(x, weight, None)?;
    let [b, cin, h, w] = x.shape();
    let cout = weight.shape()[0];
    if grad_out.shape() != [b, cout, h, w] {
        return Err(Error::Shape("conv gradient shape".into()));
    }
    let n = h * w;
    let k = cin * 9;
    let mut gx = Tensor4::zeros(x.shape());
    let mut gw = Tensor4::zeros(weight.shape());
    let mut col = vec![0.0; k * n];
    let mut gcol = vec![0.0; k * n];
    for bi in 0..b {
        let go = &grad_out.data()[bi * cout * n..(bi + 1) * cout * n];
        im2col(&x.data()[bi * cin * n..(bi + 1) * cin * n], cin, h, w, &mut col);
        // dW += dY · colᵀ
        gemm(cout, n, k, go, false, &col, true, 1.0, gw.data_mut());
        // dcol = Wᵀ · dY
        gemm(k, cout, n, weight.data(), true, go, false, 0.0, &mut gcol);
        col2im(&gcol, cin, h, w, &mut gx.data_mut()[bi * cin * n..(bi + 1) * cin * n]);
    }
    let gb = has_bias.then(|| {
        let mut gb = Tensor4::zeros([1, cout, 1, 1]);
        for bi in 0..b {
            for oc in 0..cout {
                gb.data_mut()[oc] += grad_out.plane(bi, oc).iter().sum::<f64>();
            }
        }
        gb
    });
    Ok((gx, gw, gb))
}

#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor4) -> Tensor4 {
    x.map(sigmoid_scalar)
}

/// Backward of sigmoid given its output `y`.
pub fn sigmoid_backward(y: &Tensor4, grad_out: &Tensor4) -> Tensor4 {
    zip_map(y, grad_out, |y, g| g * y * (1.0 - y))
}

pub fn tanh(x: &Tensor4) -> Tensor4 {
    x.map(f64::tanh)
}

/// Backward of tanh given its output `y`.
pub fn tanh_backward(y: &Tensor4, grad_out: &Tensor4) -> Tensor4 {
    zip_map(y, grad_out, |y, g| g * (1.0 - y * y))
}

pub fn relu(x: &Tensor4) -> Tensor4 {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor4, grad_out: &Tensor4) -> Tensor4 {
    zip_map(x, grad_out, |x, g| if x > 0.0 { g } else { 0.0 })
}

fn zip_map(a: &Tensor4, b: &Tensor4, f: impl Fn(f64, f64) -> f64) -> Tensor4 {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor4::from_vec(a.shape(), data).expect("same shape")
}

/// Channel concatenation; `a` occupies the leading channels.
pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    let [ba, ca, ha, wa] = a.shape();
    let [bb, cb, hb, wb] = b.shape();
    if ba != bb || ha != hb || wa != wb {
        return Err(Error::Shape(format!(
            "concat: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for bi in 0..ba {
        data.extend_from_slice(&a.data()[bi * a.item_len()..(bi + 1) * a.item_len()]);
        data.extend_from_slice(&b.data()[bi * b.item_len()..(bi + 1) * b.item_len()]);
    }
    Tensor4::from_vec([ba, ca + cb, ha, wa], data)
}

/// Splits a concatenation gradient back into its two parts.
pub fn concat_backward(grad_out: &Tensor4, channels_a: usize) -> (Tensor4, Tensor4) {
    let [b, c, h, w] = grad_out.shape();
    let n = h * w;
    let (mut ga, mut gb) = (Vec::new(), Vec::new());
    for bi in 0..b {
        let item = &grad_out.data()[bi * c * n..(bi + 1) * c * n];
        ga.extend_from_slice(&item[..channels_a * n]);
        gb.extend_from_slice(&item[channels_a * n..]);
    }
    (
        Tensor4::from_vec([b, channels_a, h, w], ga).expect("split"),
        Tensor4::from_vec([b, c - channels_a, h, w], gb).expect("split"),
    )
}

pub fn hadamard(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    same_shape(a, b, "hadamard")?;
    Ok(zip_map(a, b, |x, y| x * y))
}

pub fn hadamard_backward(a: &Tensor4, b: &Tensor4, grad_out: &Tensor4) -> (Tensor4, Tensor4) {
    (zip_map(grad_out, b, |g, y| g * y), zip_map(grad_out, a, |g, x| g * x))
}

pub fn add(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    same_shape(a, b, "add")?;
    Ok(zip_map(a, b, |x, y| x + y))
}

/// Adds a per-channel bias of shape `1×C×1×1`.
pub fn add_bias(x: &Tensor4, bias: &Tensor4) -> Result<Tensor4> {
    let [b, c, _, _] = x.shape();
    if bias.shape() != [1, c, 1, 1] {
        return Err(Error::Shape(format!("bias {:?} for {c} channels", bias.shape())));
    }
    let mut out = x.clone();
    for bi in 0..b {
        for ci in 0..c {
            let bv = bias.data()[ci];
            for v in out.plane_mut(bi, ci) {
                *v += bv;
            }
        }
    }
    Ok(out)
}

pub fn add_bias_backward(grad_out: &Tensor4) -> Tensor4 {
    let [b, c, _, _] = grad_out.shape();
    let mut gb = Tensor4::zeros([1, c, 1, 1]);
    for bi in 0..b {
        for ci in 0..c {
            gb.data_mut()[ci] += grad_out.plane(bi, ci).iter().sum::<f64>();
        }
    }
    gb
}

/// `s·x + offset`.
pub fn affine(x: &Tensor4, s: f64, offset: f64) -> Tensor4 {
    x.map(|v| s * v + offset)
}

pub fn scale(x: &Tensor4, s: f64) -> Tensor4 {
    affine(x, s, 0.0)
}

pub fn scale_backward(grad_out: &Tensor4, s: f64) -> Tensor4 {
    grad_out.map(|g| g * s)
}

/// 2×2 average pooling; spatial dims must be even.
pub fn avg_pool2(x: &Tensor4) -> Result<Tensor4> {
    let [b, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("avg_pool2 needs even dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([b, c, oh, ow]);
    for bi in 0..b {
        for ci in 0..c {
            let src = x.plane(bi, ci);
            let dst = out.plane_mut(bi, ci);
            for y in 0..oh {
                for xx in 0..ow {
                    let i = 2 * y * w + 2 * xx;
                    dst[y * ow + xx] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                }
            }
        }
    }
    Ok(out)
}

pub fn avg_pool2_backward(grad_out: &Tensor4) -> Tensor4 {
    let [b, c, oh, ow] = grad_out.shape();
    let (h, w) = (oh * 2, ow * 2);
    let mut gx = Tensor4::zeros([b, c, h, w]);
    for bi in 0..b {
        for ci in 0..c {
            let g = grad_out.plane(bi, ci);
            let dst = gx.plane_mut(bi, ci);
            for y in 0..h {
                for x in 0..w {
                    dst[y * w + x] = 0.25 * g[(y / 2) * ow + x / 2];
                }
            }
        }
    }
    gx
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2(x: &Tensor4) -> Tensor4 {
    let [b, c, h, w] = x.shape();
    let (oh, ow) = (h * 2, w * 2);
    let mut out = Tensor4::zeros([b, c, oh, ow]);
    for bi in 0..b {
        for ci in 0..c {
            let src = x.plane(bi, ci);
            let dst = out.plane_mut(bi, ci);
            for y in 0..oh {
                for xx in 0..ow {
                    dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &Tensor4) -> Tensor4 {
    let [b, c, oh, ow] = grad_out.shape();
    let (h, w) = (oh / 2, ow / 2);
    let mut gx = Tensor4::zeros([b, c, h, w]);
    for bi in 0..b {
        for ci in 0..c {
            let g = grad_out.plane(bi, ci);
            let dst = gx.plane_mut(bi, ci);
            for y in 0..oh {
                for x in 0..ow {
                    dst[(y / 2) * w + x / 2] += g[y * ow + x];
                }
            }
        }
    }
    gx
}

/// Per-pixel softmax over channels with max subtraction.
pub fn softmax_channels(logits: &Tensor4) -> Tensor4 {
    let [b, c, h, w] = logits.shape();
    let n = h * w;
    let mut out = Tensor4::zeros(logits.shape());
    for bi in 0..b {
        for p in 0..n {
            let base = bi * c * n + p;
            let m = (0..c)
                .map(|ci| logits.data()[base + ci * n])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for ci in 0..c {
                let e = (logits.data()[base + ci * n] - m).exp();
                out.data_mut()[base + ci * n] = e;
                z += e;
            }
            for ci in 0..c {
                out.data_mut()[base + ci * n] /= z;
            }
        }
    }
    out
}

fn check_labels(logits: &Tensor4, labels: &[u8], weights: &[f64]) -> Result<()> {
    let [b, c, h, w] = logits.shape();
    if labels.len() != b * h * w {
        return Err(Error::Shape(format!(
            "{} labels for {b}x{h}x{w} logits",
            labels.len()
        )));
    }
    if weights.len() != c {
        return Err(Error::Shape(format!("{} class weights for {c} classes", weights.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= c) {
        return Err(Error::LabelOutOfRange {
            label: l as usize,
            classes: c,
        });
    }
    Ok(())
}

/// Mean over pixels of `−w_y · ln p_y`.
pub fn weighted_cross_entropy(logits: &Tensor4, labels: &[u8], weights: &[f64]) -> Result<f64> {
    check_labels(logits, labels, weights)?;
    let [b, c, h, w] = logits.shape();
    let n = h * w;
    let mut total = 0.0;
    for bi in 0..b {
        for p in 0..n {
            let base = bi * c * n + p;
            let m = (0..c)
                .map(|ci| logits.data()[base + ci * n])
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = (0..c)
                .map(|ci| (logits.data()[base + ci * n] - m).exp())
                .sum::<f64>()
                .ln()
                + m;
            let y = labels[bi * n + p] as usize;
            total += weights[y] * (lse - logits.data()[base + y * n]);
        }
    }
    Ok(total / (b * n) as f64)
}

/// Gradient of [`weighted_cross_entropy`] w.r.t. the logits, scaled by `grad_out`.
pub fn weighted_cross_entropy_backward(
    logits: &Tensor4,
    labels: &[u8],
    weights: &[f64],
    grad_out: f64,
) -> Result<Tensor4> {
    check_labels(logits, labels, weights)?;
    let [b, c, h, w] = logits.shape();
    let n = h * w;
    let mut g = softmax_channels(logits);
    let norm = grad_out / (b * n) as f64;
    for bi in 0..b {
        for p in 0..n {
            let y = labels[bi * n + p] as usize;
            let wy = weights[y] * norm;
            for ci in 0..c {
                let i = bi * c * n + ci * n + p;
                let onehot = if ci == y { 1.0 } else { 0.0 };
                g.data_mut()[i] = wy * (g.data()[i] - onehot);
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor4::from_fn([2, 1, 4, 5], |i| i as f64 * 0.3 - 2.0);
        let mut w = Tensor4::zeros([1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let b = Tensor4::zeros([1, 1, 1, 1]);
        assert_eq!(conv2d(&x, &w, Some(&b)).unwrap(), x);
    }

    #[test]
    fn all_ones_kernel_counts_neighbours() {
        let x = Tensor4::filled([1, 1, 5, 5], 1.0);
        let w = Tensor4::filled([1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None).unwrap();
        // brute-force neighbour count
        for r in 0..5i32 {
            for c in 0..5i32 {
                let mut count = 0.0;
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        if (0..5).contains(&(r + dr)) && (0..5).contains(&(c + dc)) {
                            count += 1.0;
                        }
                    }
                }
                assert_eq!(y.at(0, 0, r as usize, c as usize), count);
            }
        }
        assert_eq!(y.at(0, 0, 2, 2), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
        assert_eq!(y.at(0, 0, 0, 2), 6.0);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor4::zeros([1, 2, 4, 4]);
        let w = Tensor4::zeros([1, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &w, None), Err(Error::Shape(_))));
    }

    #[test]
    fn activations_at_zero() {
        let z = Tensor4::zeros([1, 1, 1, 1]);
        assert_eq!(sigmoid(&z).data()[0], 0.5);
        assert_eq!(tanh(&z).data()[0], 0.0);
        assert_eq!(relu(&z).data()[0], 0.0);
        let big = Tensor4::from_vec([1, 1, 1, 2], vec![-800.0, 800.0]).unwrap();
        let s = sigmoid(&big);
        assert!(s.is_finite());
        assert!(s.data()[0] >= 0.0 && s.data()[1] <= 1.0);
    }

    #[test]
    fn concat_layout_and_split() {
        let a = Tensor4::from_fn([2, 3, 2, 2], |i| i as f64);
        let b = Tensor4::from_fn([2, 5, 2, 2], |i| -(i as f64));
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), [2, 8, 2, 2]);
        for bi in 0..2 {
            for ch in 0..3 {
                assert_eq!(c.plane(bi, ch), a.plane(bi, ch));
            }
            for ch in 0..5 {
                assert_eq!(c.plane(bi, 3 + ch), b.plane(bi, ch));
            }
        }
        let (ga, gb) = concat_backward(&c, 3);
        assert_eq!(ga, a);
        assert_eq!(gb, b);
        let total: f64 = ga.data().iter().chain(gb.data()).sum();
        assert_eq!(total, c.data().iter().sum::<f64>());
        assert!(concat_channels(&a, &Tensor4::zeros([2, 1, 3, 2])).is_err());
    }

    #[test]
    fn hadamard_with_ones_is_identity() {
        let a = Tensor4::from_fn([1, 2, 3, 3], |i| i as f64 - 4.0);
        let ones = Tensor4::filled([1, 2, 3, 3], 1.0);
        assert_eq!(hadamard(&a, &ones).unwrap(), a);
        assert!(hadamard(&a, &Tensor4::zeros([1, 2, 3, 2])).is_err());
    }

    #[test]
    fn pooling_round_trip_shapes() {
        let x = Tensor4::from_fn([1, 2, 4, 6], |i| i as f64);
        let p = avg_pool2(&x).unwrap();
        assert_eq!(p.shape(), [1, 2, 2, 3]);
        assert_eq!(p.at(0, 0, 0, 0), (0.0 + 1.0 + 6.0 + 7.0) / 4.0);
        assert_eq!(upsample2(&p).shape(), x.shape());
        assert!(avg_pool2(&Tensor4::zeros([1, 1, 3, 4])).is_err());
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let logits = Tensor4::zeros([1, 3, 2, 2]);
        let labels = [0u8, 1, 2, 1];
        let l = weighted_cross_entropy(&logits, &labels, &[1.0; 3]).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);
        let l2 = weighted_cross_entropy(&logits, &labels, &[2.0; 3]).unwrap();
        assert!((l2 - 2.0 * l).abs() < 1e-12);
        assert!(matches!(
            weighted_cross_entropy(&logits, &[0, 1, 3, 0], &[1.0; 3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }
}
