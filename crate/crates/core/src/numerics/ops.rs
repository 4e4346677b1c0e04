use crate::error::{Error, Result};
use crate::numerics::counter;
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// `a · b` for `a: [m x k]`, `b: [k x n]`.
///
/// Each output element accumulates over `k` in ascending order.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul inner dims differ: [{m}x{k}] . [{k2}x{n}]"
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    counter::add((m * k * n) as u64);
    Tensor::new(&[m, n], out)
}

/// `aᵀ · b` for `a: [k x m]`, `b: [k x n]`.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, m) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul_tn row counts differ: {k} vs {k2}"
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for p in 0..k {
        let brow = &bd[p * n..(p + 1) * n];
        for i in 0..m {
            let api = ad[p * m + i];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
    counter::add((m * k * n) as u64);
    Tensor::new(&[m, n], out)
}

/// `a · bᵀ` for `a: [m x k]`, `b: [n x k]`.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul_nt column counts differ: {k} vs {k2}"
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] = acc;
        }
    }
    counter::add((m * k * n) as u64);
    Tensor::new(&[m, n], out)
}

/// Adds a bias row vector to every row of `x` in place.
pub fn add_row_bias<T: Scalar>(x: &mut Tensor<T>, bias: &Tensor<T>) -> Result<()> {
    let c = x.last_dim();
    if bias.len() != c {
        return Err(Error::dim(format!(
            "bias of length {} for rows of width {c}",
            bias.len()
        )));
    }
    let b = bias.data().to_vec();
    for chunk in x.data_mut().chunks_mut(c) {
        for (v, &bv) in chunk.iter_mut().zip(&b) {
            *v += bv;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding.
    Valid,
    /// `left` zeros before and `right` zeros after the sequence.
    Explicit { left: usize, right: usize },
    /// `K - 1` zeros on the left only: output `t` sees inputs `<= t`.
    Causal,
    /// Output length equals input length at stride 1, extra tap on the left
    /// for even kernels.
    Same,
}

impl Padding {
    pub fn amounts(self, kernel: usize) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Explicit { left, right } => (left, right),
            Padding::Causal => (kernel - 1, 0),
            Padding::Same => {
                let total = kernel - 1;
                (total - total / 2, total / 2)
            }
        }
    }
}

/// Geometry of a 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub padding: Padding,
    pub groups: usize,
}

impl Conv1dSpec {
    pub fn new(stride: usize, padding: Padding, groups: usize) -> Self {
        Self {
            stride,
            padding,
            groups,
        }
    }

    pub fn output_len(&self, len: usize, kernel: usize) -> Result<usize> {
        let (l, r) = self.padding.amounts(kernel);
        let padded = len + l + r;
        if padded < kernel || self.stride == 0 {
            return Err(Error::InvalidLength(format!(
                "input of length {len} (padded {padded}) shorter than kernel {kernel}"
            )));
        }
        Ok((padded - kernel) / self.stride + 1)
    }
}

fn conv_shapes<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &Conv1dSpec,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (c_in, len) = x.dims2()?;
    let (c_out, cig, k) = match w.shape() {
        &[a, b, c] => (a, b, c),
        s => {
            return Err(Error::dim(format!(
                "conv weight must be [C_out x C_in/groups x K], got {s:?}"
            )))
        }
    };
    let g = spec.groups;
    if g == 0 || c_in % g != 0 || c_out % g != 0 || c_in / g != cig {
        return Err(Error::dim(format!(
            "conv groups {g} incompatible with C_in={c_in}, C_out={c_out}, weight C_in/groups={cig}"
        )));
    }
    let out_len = spec.output_len(len, k)?;
    Ok((c_in, len, c_out, cig, k, out_len))
}

/// Grouped 1-D convolution of `x: [C_in x L]` with `w: [C_out x C_in/groups x K]`.
///
/// MACs are counted densely as `C_out · C_in/groups · K · L'` (padded taps
/// included).
pub fn conv1d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv1dSpec,
) -> Result<Tensor<T>> {
    let (_c_in, len, c_out, cig, k, out_len) = conv_shapes(x, w, spec)?;
    let (pl, _) = spec.padding.amounts(k);
    let cog = c_out / spec.groups;
    let stride = spec.stride;
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![T::zero(); c_out * out_len];
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::dim("conv bias length != C_out"));
        }
        for (co, &bv) in b.data().iter().enumerate() {
            out[co * out_len..(co + 1) * out_len].fill(bv);
        }
    }
    for co in 0..c_out {
        let g = co / cog;
        let orow = &mut out[co * out_len..(co + 1) * out_len];
        for ci in 0..cig {
            let xrow = &xd[(g * cig + ci) * len..(g * cig + ci + 1) * len];
            for tap in 0..k {
                let wv = wd[(co * cig + ci) * k + tap];
                // input index = t*stride + tap - pl, must lie in 0..len
                let (t0, t1) = valid_range(out_len, stride, tap, pl, len);
                for t in t0..t1 {
                    orow[t] += wv * xrow[t * stride + tap - pl];
                }
            }
        }
    }
    counter::add((c_out * cig * k * out_len) as u64);
    Tensor::new(&[c_out, out_len], out)
}

/// Output positions `t` whose input index `t*stride + tap - pl` is in bounds.
fn valid_range(out_len: usize, stride: usize, tap: usize, pl: usize, len: usize) -> (usize, usize) {
    let t0 = if tap >= pl {
        0
    } else {
        (pl - tap).div_ceil(stride)
    };
    // t*stride + tap - pl <= len - 1
    let limit = len + pl - 1;
    let t1 = if limit < tap {
        0
    } else {
        ((limit - tap) / stride + 1).min(out_len)
    };
    (t0.min(t1), t1)
}

/// Gradients of [`conv1d`] with respect to input, weight and bias.
pub fn conv1d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    spec: &Conv1dSpec,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (c_in, len, c_out, cig, k, out_len) = conv_shapes(x, w, spec)?;
    if dy.shape() != [c_out, out_len] {
        return Err(Error::dim(format!(
            "conv upstream gradient {:?}, expected [{c_out}, {out_len}]",
            dy.shape()
        )));
    }
    let (pl, _) = spec.padding.amounts(k);
    let cog = c_out / spec.groups;
    let stride = spec.stride;
    let (xd, wd, gd) = (x.data(), w.data(), dy.data());
    let mut dx = vec![T::zero(); c_in * len];
    let mut dw = vec![T::zero(); wd.len()];
    let mut db = vec![T::zero(); c_out];
    for co in 0..c_out {
        let g = co / cog;
        let grow = &gd[co * out_len..(co + 1) * out_len];
        db[co] = grow.iter().copied().sum();
        for ci in 0..cig {
            let xi = (g * cig + ci) * len;
            for tap in 0..k {
                let wi = (co * cig + ci) * k + tap;
                let wv = wd[wi];
                let (t0, t1) = valid_range(out_len, stride, tap, pl, len);
                let mut acc = T::zero();
                for t in t0..t1 {
                    let idx = xi + t * stride + tap - pl;
                    acc += grow[t] * xd[idx];
                    dx[idx] += grow[t] * wv;
                }
                dw[wi] += acc;
            }
        }
    }
    counter::add(2 * (c_out * cig * k * out_len) as u64);
    Ok((
        Tensor::new(&[c_in, len], dx)?,
        Tensor::new(w.shape(), dw)?,
        Tensor::new(&[c_out], db)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Softplus,
    Gelu,
    Exp,
    Softmax { axis: usize },
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// `ln(1 + e^x)`, computed without overflow for large `|x|`.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let u = c * (x + a * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let du = c * (T::one() + T::lit(3.0) * a * x * x);
    T::lit(0.5) * (T::one() + th) + T::lit(0.5) * x * (T::one() - th * th) * du
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    Ok(match kind {
        Activation::Silu => x.map(silu),
        Activation::Softplus => x.map(softplus),
        Activation::Gelu => x.map(gelu),
        Activation::Exp => x.map(|v| v.exp()),
        Activation::Softmax { axis } => softmax_axis(x, axis)?,
    })
}

/// Numerically stable softmax along `axis`.
pub fn softmax_axis<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::dim(format!(
            "softmax axis {axis} for rank {}",
            shape.len()
        )));
    }
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.clone();
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let m = (0..n).fold(T::neg_infinity(), |m, j| m.max(d[idx(j)]));
            let mut s = T::zero();
            for j in 0..n {
                let e = (d[idx(j)] - m).exp();
                d[idx(j)] = e;
                s += e;
            }
            for j in 0..n {
                d[idx(j)] /= s;
            }
        }
    }
    Ok(out)
}

/// Row-wise log-softmax of a rank-2 tensor.
pub fn log_softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = x.dims2()?;
    let mut out = x.clone();
    for i in 0..r {
        let row = out.row_mut(i);
        let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    let _ = c;
    Ok(out)
}

/// Saved statistics of a layer-norm forward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    pub xhat: Tensor<T>,
    pub rstd: Vec<T>,
}

/// Normalizes the last axis to zero mean and unit variance, then applies
/// `gain` and `bias`.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    Ok(layer_norm_forward(x, gain, bias, eps)?.0)
}

pub fn layer_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let d = x.last_dim();
    if gain.len() != d || bias.len() != d {
        return Err(Error::dim(format!(
            "layer norm over width {d} with gain {} / bias {}",
            gain.len(),
            bias.len()
        )));
    }
    let rows = x.len() / d;
    let inv_d = T::one() / T::lit(d as f64);
    let mut xhat = x.clone();
    let mut y = x.clone();
    let mut rstd = Vec::with_capacity(rows);
    let (g, b) = (gain.data(), bias.data());
    for r in 0..rows {
        let xr = &mut xhat.data_mut()[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        for v in xr.iter_mut() {
            *v = (*v - mean) * rs;
        }
        let yr = &mut y.data_mut()[r * d..(r + 1) * d];
        for j in 0..d {
            yr[j] = xr[j] * g[j] + b[j];
        }
        rstd.push(rs);
    }
    Ok((y, LayerNormCache { xhat, rstd }))
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gain: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    cache.xhat.check_same_shape(dy)?;
    let d = dy.last_dim();
    let rows = dy.len() / d;
    let inv_d = T::one() / T::lit(d as f64);
    let g = gain.data();
    let mut dx = dy.clone();
    let mut dg = vec![T::zero(); d];
    let mut db = vec![T::zero(); d];
    for r in 0..rows {
        let xh = &cache.xhat.data()[r * d..(r + 1) * d];
        let dyr = &dy.data()[r * d..(r + 1) * d];
        let mut sum_dxh = T::zero();
        let mut sum_dxh_xh = T::zero();
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            let dxh = dyr[j] * g[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[j];
        }
        let rs = cache.rstd[r];
        let out = &mut dx.data_mut()[r * d..(r + 1) * d];
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            out[j] = rs * (dxh - inv_d * sum_dxh - xh[j] * inv_d * sum_dxh_xh);
        }
    }
    Ok((dx, Tensor::new(&[d], dg)?, Tensor::new(&[d], db)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = rand_tensor(&mut rng, &[3, 4]);
        assert_eq!(matmul(&Tensor::identity(3), &b).unwrap(), b);
        let z = matmul(&b, &Tensor::zeros(&[4, 2])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_tensor(&mut rng, &[2, 3]);
        let b = rand_tensor(&mut rng, &[3, 4]);
        let c = matmul(&a, &b).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a.at2(i, k) * b.at2(k, j);
                }
                assert_eq!(c.at2(i, j), s);
            }
        }
        assert_eq!(matmul_tn(&a.transpose().unwrap(), &b).unwrap(), c);
        let nt = matmul_nt(&a, &b.transpose().unwrap()).unwrap();
        for (x, y) in nt.data().iter().zip(c.data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_scalar_homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_tensor(&mut rng, &[4, 5]);
        let b = rand_tensor(&mut rng, &[5, 3]);
        let lhs = matmul(&a.scale(2.5), &b).unwrap();
        let rhs = matmul(&a, &b).unwrap().scale(2.5);
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_identity_and_sum() {
        let x = Tensor::<f64>::from_f64(&[1, 3], &[1.0, 2.0, 3.0]).unwrap();
        let one = Tensor::from_f64(&[1, 1, 1], &[1.0]).unwrap();
        let spec = Conv1dSpec::new(1, Padding::Valid, 1);
        assert_eq!(conv1d(&x, &one, None, &spec).unwrap(), x);
        let ones = Tensor::from_f64(&[1, 1, 3], &[1.0; 3]).unwrap();
        assert_eq!(conv1d(&x, &ones, None, &spec).unwrap().data(), &[6.0]);
    }

    #[test]
    fn conv_too_short() {
        let x = Tensor::<f64>::from_f64(&[1, 2], &[1.0, 2.0]).unwrap();
        let w = Tensor::from_f64(&[1, 1, 3], &[1.0; 3]).unwrap();
        let spec = Conv1dSpec::new(1, Padding::Valid, 1);
        assert!(matches!(
            conv1d(&x, &w, None, &spec),
            Err(Error::InvalidLength(_))
        ));
    }

    /// Sliding-window dot products written from the definition.
    fn conv_oracle(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        stride: usize,
        pl: usize,
        pr: usize,
        groups: usize,
    ) -> Vec<f64> {
        let (c_in, len) = x.dims2().unwrap();
        let (c_out, cig, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        let mut padded = vec![vec![0.0; len + pl + pr]; c_in];
        for c in 0..c_in {
            for t in 0..len {
                padded[c][t + pl] = x.at2(c, t);
            }
        }
        let out_len = (len + pl + pr - k) / stride + 1;
        let mut out = Vec::new();
        for co in 0..c_out {
            let g = co / (c_out / groups);
            for t in 0..out_len {
                let mut s = 0.0;
                for ci in 0..cig {
                    let window = &padded[g * cig + ci][t * stride..t * stride + k];
                    let kern = &w.data()[(co * cig + ci) * k..(co * cig + ci + 1) * k];
                    s += window.iter().zip(kern).map(|(a, b)| a * b).sum::<f64>();
                }
                out.push(s);
            }
        }
        out
    }

    #[test]
    fn conv_matches_sliding_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(c_in, c_out, k, stride, groups, padding) in &[
            (2, 3, 3, 1, 1, Padding::Valid),
            (4, 4, 4, 1, 4, Padding::Causal),
            (2, 4, 5, 2, 2, Padding::Same),
            (1, 2, 10, 5, 1, Padding::Explicit { left: 3, right: 1 }),
        ] {
            let x = rand_tensor(&mut rng, &[c_in, 23]);
            let w = rand_tensor(&mut rng, &[c_out, c_in / groups, k]);
            let spec = Conv1dSpec::new(stride, padding, groups);
            let (pl, pr) = padding.amounts(k);
            let got = conv1d(&x, &w, None, &spec).unwrap();
            let want = conv_oracle(&x, &w, stride, pl, pr, groups);
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn causal_conv_prefix_is_bitwise_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, &[3, 12]);
        let w = rand_tensor(&mut rng, &[3, 1, 4]);
        let spec = Conv1dSpec::new(1, Padding::Causal, 3);
        let base = conv1d(&x, &w, None, &spec).unwrap();
        for t in 0..12 {
            let mut xp = x.clone();
            for c in 0..3 {
                xp.data_mut()[c * 12 + t] += 0.75;
            }
            let y = conv1d(&xp, &w, None, &spec).unwrap();
            for c in 0..3 {
                for s in 0..t {
                    assert_eq!(y.at2(c, s).to_bits(), base.at2(c, s).to_bits());
                }
            }
        }
    }

    #[test]
    fn activation_values() {
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(silu(0.0f64), 0.0);
        let s = activation(
            &Tensor::<f64>::from_f64(&[2], &[0.0, 0.0]).unwrap(),
            Activation::Softmax { axis: 0 },
        )
        .unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        // saturating branches stay finite
        assert!(softplus(-1e4f64).is_finite() && softplus(-1e4f64) >= 0.0);
        assert!((softplus(800.0f64) - 800.0).abs() < 1e-12);
        assert!(sigmoid(-800.0f64).is_finite());
        assert!(activation(&Tensor::<f64>::zeros(&[2]), Activation::Softmax { axis: 1 }).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&mut rng, &[3, 5]).scale(10.0);
        for axis in 0..2 {
            let s = softmax_axis(&x, axis).unwrap();
            let sums = if axis == 1 {
                (0..3).map(|i| s.row(i).iter().sum::<f64>()).collect::<Vec<_>>()
            } else {
                s.sum_rows().unwrap().into_data()
            };
            for v in sums {
                assert!((v - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn layer_norm_cases() {
        let one = Tensor::<f64>::full(&[4], 1.0);
        let zero = Tensor::<f64>::zeros(&[4]);
        let y = layer_norm(&Tensor::full(&[4], 3.0), &one, &zero, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let (g2, b2) = (Tensor::full(&[2], 1.0), Tensor::zeros(&[2]));
        let y = layer_norm(&Tensor::from_f64(&[2], &[-1.0, 1.0]).unwrap(), &g2, &b2, 1e-5).unwrap();
        let f = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] + f).abs() < 1e-15 && (y.data()[1] - f).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&mut rng, &[32]).scale(3.0);
        let eps = 1e-6;
        let g = Tensor::full(&[32], 1.0);
        let b = Tensor::zeros(&[32]);
        let y = layer_norm(&x, &g, &b, eps).unwrap();
        let mean = y.sum() / 32.0;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < eps);
    }
}
