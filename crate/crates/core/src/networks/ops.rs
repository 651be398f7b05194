//! Tensor primitives the layers need beyond what candle offers efficiently on CPU.
//!
//! `conv2d` is a stride-1 square-kernel convolution over NCHW tensors lowered to
//! im2col + GEMM, with explicit input- and weight-gradient kernels.

use candle_core::{bail, CpuStorage, CustomOp1, CustomOp2, CustomOp3, Layout, Result, Shape, Tensor, WithDType};

trait Gemm: WithDType + Default + std::ops::AddAssign {
    /// `C = alpha * A B + beta * C` on strided row/column layouts.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Gemm for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Gemm for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

fn contiguous<'a, T: WithDType>(s: &'a CpuStorage, l: &Layout, what: &str) -> Result<&'a [T]> {
    let data = s.as_slice::<T>()?;
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => bail!("conv2d: {what} must be contiguous"),
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(batch: usize, cin: usize, cout: usize, h: usize, w: usize, k: usize, pad: usize) -> Result<Self> {
        if h + 2 * pad < k || w + 2 * pad < k {
            bail!("conv2d: kernel {k} larger than padded input {h}x{w} (pad {pad})");
        }
        Ok(Self { batch, cin, cout, h, w, k, pad, ho: h + 2 * pad - k + 1, wo: w + 2 * pad - k + 1 })
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn pixels(&self) -> usize {
        self.ho * self.wo
    }

    /// Pointwise convolutions read the input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.pad == 0
    }

    /// Output columns `ox` whose input column `ox + kj - pad` lies inside the image.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kj).min(self.wo);
        let hi = (self.w + self.pad).saturating_sub(kj).min(self.wo);
        (lo, hi.max(lo))
    }

    fn im2col<T: Gemm>(&self, x: &[T], cols: &mut [T]) {
        let (k, p, howo) = (self.k, self.pad, self.pixels());
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &mut cols[((ci * k + ki) * k + kj) * howo..][..howo];
                    let (lo, hi) = self.valid_cols(kj);
                    for oy in 0..self.ho {
                        let dst = &mut row[oy * self.wo..(oy + 1) * self.wo];
                        let iy = oy + ki;
                        if iy < p || iy - p >= self.h {
                            dst.fill(T::default());
                            continue;
                        }
                        let src = &plane[(iy - p) * self.w..];
                        dst[..lo].fill(T::default());
                        dst[hi..].fill(T::default());
                        dst[lo..hi].copy_from_slice(&src[lo + kj - p..hi + kj - p]);
                    }
                }
            }
        }
    }

    fn col2im<T: Gemm>(&self, cols: &[T], x: &mut [T]) {
        let (k, p, howo) = (self.k, self.pad, self.pixels());
        for ci in 0..self.cin {
            let plane = &mut x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &cols[((ci * k + ki) * k + kj) * howo..][..howo];
                    let (lo, hi) = self.valid_cols(kj);
                    for oy in 0..self.ho {
                        let iy = oy + ki;
                        if iy < p || iy - p >= self.h {
                            continue;
                        }
                        let dst = &mut plane[(iy - p) * self.w + lo + kj - p..][..hi - lo];
                        for (d, s) in dst.iter_mut().zip(&row[oy * self.wo + lo..oy * self.wo + hi]) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }

    fn forward<T: Gemm>(&self, x: &[T], weight: &[T]) -> Vec<T> {
        let (kk, howo) = (self.rows(), self.pixels());
        let mut out = vec![T::default(); self.batch * self.cout * howo];
        let mut cols = if self.is_pointwise() { Vec::new() } else { vec![T::default(); kk * howo] };
        for b in 0..self.batch {
            let xb = &x[b * self.cin * self.h * self.w..(b + 1) * self.cin * self.h * self.w];
            let colm: &[T] = if self.is_pointwise() {
                xb
            } else {
                self.im2col(xb, &mut cols);
                &cols
            };
            let ob = &mut out[b * self.cout * howo..(b + 1) * self.cout * howo];
            // SAFETY: dimensions and row-major strides match the slice lengths above.
            unsafe {
                T::gemm(
                    self.cout,
                    kk,
                    howo,
                    weight.as_ptr(),
                    kk as isize,
                    1,
                    colm.as_ptr(),
                    howo as isize,
                    1,
                    T::default(),
                    ob.as_mut_ptr(),
                    howo as isize,
                    1,
                )
            }
        }
        out
    }

    fn input_grad<T: Gemm>(&self, grad: &[T], weight: &[T]) -> Vec<T> {
        let (kk, howo) = (self.rows(), self.pixels());
        let plane = self.cin * self.h * self.w;
        let mut gx = vec![T::default(); self.batch * plane];
        let mut dcols = if self.is_pointwise() { Vec::new() } else { vec![T::default(); kk * howo] };
        for b in 0..self.batch {
            let gb = &grad[b * self.cout * howo..(b + 1) * self.cout * howo];
            let gxb = &mut gx[b * plane..(b + 1) * plane];
            let target: *mut T = if self.is_pointwise() { gxb.as_mut_ptr() } else { dcols.as_mut_ptr() };
            // SAFETY: W^T viewed through swapped strides; target holds kk * howo values.
            unsafe {
                T::gemm(
                    kk,
                    self.cout,
                    howo,
                    weight.as_ptr(),
                    1,
                    kk as isize,
                    gb.as_ptr(),
                    howo as isize,
                    1,
                    T::default(),
                    target,
                    howo as isize,
                    1,
                )
            }
            if !self.is_pointwise() {
                self.col2im(&dcols, gxb);
            }
        }
        gx
    }

    fn weight_grad<T: Gemm>(&self, x: &[T], grad: &[T]) -> Vec<T> {
        let (kk, howo) = (self.rows(), self.pixels());
        let mut gw = vec![T::default(); self.cout * kk];
        let mut cols = if self.is_pointwise() { Vec::new() } else { vec![T::default(); kk * howo] };
        for b in 0..self.batch {
            let xb = &x[b * self.cin * self.h * self.w..(b + 1) * self.cin * self.h * self.w];
            let colm: &[T] = if self.is_pointwise() {
                xb
            } else {
                self.im2col(xb, &mut cols);
                &cols
            };
            let gb = &grad[b * self.cout * howo..(b + 1) * self.cout * howo];
            // Long reductions with few outputs: explicit dot products beat GEMM packing here.
            for r in 0..kk {
                let row = &colm[r * howo..(r + 1) * howo];
                for o in 0..self.cout {
                    gw[o * kk + r] += dot(&gb[o * howo..(o + 1) * howo], row);
                }
            }
        }
        gw
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
fn dot<T: Gemm>(a: &[T], b: &[T]) -> T {
    let (ca, ra) = a.as_chunks::<8>();
    let (cb, rb) = b.as_chunks::<8>();
    let mut acc = [T::default(); 8];
    for (x, y) in ca.iter().zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = T::default();
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    for v in acc {
        s += v;
    }
    s
}

fn dims4(l: &Layout, what: &str) -> Result<(usize, usize, usize, usize)> {
    match l.shape().dims() {
        &[a, b, c, d] => Ok((a, b, c, d)),
        d => bail!("conv2d: {what} must be rank 4, got {d:?}"),
    }
}

struct Conv2dOp {
    pad: usize,
}

impl CustomOp2 for Conv2dOp {
    fn name(&self) -> &'static str {
        "im2col-conv2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let (b, cin, h, w) = dims4(l1, "input")?;
        let (cout, wcin, k, k2) = dims4(l2, "weight")?;
        if wcin != cin || k != k2 {
            bail!("conv2d: weight {:?} incompatible with input {:?}", l2.shape(), l1.shape());
        }
        let g = Geometry::new(b, cin, cout, h, w, k, self.pad)?;
        let shape = Shape::from((b, cout, g.ho, g.wo));
        let out = match (s1, s2) {
            (CpuStorage::F32(_), CpuStorage::F32(_)) => CpuStorage::F32(g.forward::<f32>(
                contiguous(s1, l1, "input")?,
                contiguous(s2, l2, "weight")?,
            )),
            (CpuStorage::F64(_), CpuStorage::F64(_)) => CpuStorage::F64(g.forward::<f64>(
                contiguous(s1, l1, "input")?,
                contiguous(s2, l2, "weight")?,
            )),
            _ => bail!("conv2d: only f32 and f64 are supported"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, x: &Tensor, w: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let (_, _, h, wd) = x.dims4()?;
        let gx = grad.apply_op2_no_bwd(w, &ConvInputGrad { pad: self.pad, h, w: wd })?;
        let gw = x.apply_op2_no_bwd(&grad, &ConvWeightGrad { pad: self.pad, k: w.dim(2)? })?;
        Ok((Some(gx), Some(gw)))
    }
}

/// `(grad_out, weight) -> grad_input`.
struct ConvInputGrad {
    pad: usize,
    h: usize,
    w: usize,
}

impl CustomOp2 for ConvInputGrad {
    fn name(&self) -> &'static str {
        "im2col-conv2d-input-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let (b, cout, _, _) = dims4(l1, "grad")?;
        let (_, cin, k, _) = dims4(l2, "weight")?;
        let g = Geometry::new(b, cin, cout, self.h, self.w, k, self.pad)?;
        let shape = Shape::from((b, cin, self.h, self.w));
        let out = match (s1, s2) {
            (CpuStorage::F32(_), CpuStorage::F32(_)) => CpuStorage::F32(g.input_grad::<f32>(
                contiguous(s1, l1, "grad")?,
                contiguous(s2, l2, "weight")?,
            )),
            (CpuStorage::F64(_), CpuStorage::F64(_)) => CpuStorage::F64(g.input_grad::<f64>(
                contiguous(s1, l1, "grad")?,
                contiguous(s2, l2, "weight")?,
            )),
            _ => bail!("conv2d: only f32 and f64 are supported"),
        };
        Ok((out, shape))
    }
}

/// `(input, grad_out) -> grad_weight`.
struct ConvWeightGrad {
    pad: usize,
    k: usize,
}

impl CustomOp2 for ConvWeightGrad {
    fn name(&self) -> &'static str {
        "im2col-conv2d-weight-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let (b, cin, h, w) = dims4(l1, "input")?;
        let (_, cout, _, _) = dims4(l2, "grad")?;
        let g = Geometry::new(b, cin, cout, h, w, self.k, self.pad)?;
        let shape = Shape::from((cout, cin, self.k, self.k));
        let out = match (s1, s2) {
            (CpuStorage::F32(_), CpuStorage::F32(_)) => CpuStorage::F32(g.weight_grad::<f32>(
                contiguous(s1, l1, "input")?,
                contiguous(s2, l2, "grad")?,
            )),
            (CpuStorage::F64(_), CpuStorage::F64(_)) => CpuStorage::F64(g.weight_grad::<f64>(
                contiguous(s1, l1, "input")?,
                contiguous(s2, l2, "grad")?,
            )),
            _ => bail!("conv2d: only f32 and f64 are supported"),
        };
        Ok((out, shape))
    }
}

/// Stride-1 convolution of `x: (B, Cin, H, W)` with `weight: (Cout, Cin, k, k)` and zero
/// padding `pad` on every side. Output is `(B, Cout, H + 2 pad - k + 1, W + 2 pad - k + 1)`.
pub fn conv2d(x: &Tensor, weight: &Tensor, pad: usize) -> Result<Tensor> {
    x.contiguous()?.apply_op2(&weight.contiguous()?, Conv2dOp { pad })
}

/// Convolution plus per-channel bias, optionally followed by ReLU, as one graph node.
struct ConvBiasOp {
    pad: usize,
    relu: bool,
}

impl ConvBiasOp {
    fn run<T: Gemm + PartialOrd>(&self, g: &Geometry, x: &[T], w: &[T], bias: &[T]) -> Vec<T> {
        let mut out = g.forward(x, w);
        let howo = g.pixels();
        for (k, plane) in out.chunks_exact_mut(howo).enumerate() {
            let b = bias[k % g.cout];
            for v in plane {
                *v += b;
                if self.relu && *v < T::default() {
                    *v = T::default();
                }
            }
        }
        out
    }
}

impl CustomOp3 for ConvBiasOp {
    fn name(&self) -> &'static str {
        "im2col-conv2d-bias"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> Result<(CpuStorage, Shape)> {
        let (b, cin, h, w) = dims4(l1, "input")?;
        let (cout, wcin, k, k2) = dims4(l2, "weight")?;
        if wcin != cin || k != k2 || l3.shape().dims() != [cout] {
            bail!("conv2d: weight {:?} / bias {:?} incompatible with input {:?}", l2.shape(), l3.shape(), l1.shape());
        }
        let g = Geometry::new(b, cin, cout, h, w, k, self.pad)?;
        let shape = Shape::from((b, cout, g.ho, g.wo));
        let out = match (s1, s2, s3) {
            (CpuStorage::F32(_), CpuStorage::F32(_), CpuStorage::F32(_)) => CpuStorage::F32(self.run::<f32>(
                &g,
                contiguous(s1, l1, "input")?,
                contiguous(s2, l2, "weight")?,
                contiguous(s3, l3, "bias")?,
            )),
            (CpuStorage::F64(_), CpuStorage::F64(_), CpuStorage::F64(_)) => CpuStorage::F64(self.run::<f64>(
                &g,
                contiguous(s1, l1, "input")?,
                contiguous(s2, l2, "weight")?,
                contiguous(s3, l3, "bias")?,
            )),
            _ => bail!("conv2d: only f32 and f64 are supported"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, x: &Tensor, w: &Tensor, _b: &Tensor, res: &Tensor, grad: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let grad = if self.relu { grad.apply_op2_no_bwd(res, &ReluMask)? } else { grad };
        let (_, _, h, wd) = x.dims4()?;
        let gx = grad.apply_op2_no_bwd(w, &ConvInputGrad { pad: self.pad, h, w: wd })?;
        let gw = x.apply_op2_no_bwd(&grad, &ConvWeightGrad { pad: self.pad, k: w.dim(2)? })?;
        let gb = grad.apply_op1_no_bwd(&ChannelSum)?;
        Ok((Some(gx), Some(gw), Some(gb)))
    }
}

fn map2<F32, F64>(s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout, f32: F32, f64: F64) -> Result<CpuStorage>
where
    F32: Fn(&[f32], &[f32]) -> Vec<f32>,
    F64: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    Ok(match (s1, s2) {
        (CpuStorage::F32(_), CpuStorage::F32(_)) => CpuStorage::F32(f32(contiguous(s1, l1, "lhs")?, contiguous(s2, l2, "rhs")?)),
        (CpuStorage::F64(_), CpuStorage::F64(_)) => CpuStorage::F64(f64(contiguous(s1, l1, "lhs")?, contiguous(s2, l2, "rhs")?)),
        _ => bail!("only matching f32 or f64 operands are supported"),
    })
}

/// `(grad, relu_output) -> grad` zeroed where the output was clamped.
struct ReluMask;

impl CustomOp2 for ReluMask {
    fn name(&self) -> &'static str {
        "relu-mask"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        fn mask<T: WithDType>(g: &[T], r: &[T]) -> Vec<T> {
            g.iter().zip(r).map(|(&g, &r)| if r > T::zero() { g } else { T::zero() }).collect()
        }
        Ok((map2(s1, l1, s2, l2, mask::<f32>, mask::<f64>)?, l1.shape().clone()))
    }
}

/// `(B, C, H, W) -> (C)` sums.
struct ChannelSum;

impl CustomOp1 for ChannelSum {
    fn name(&self) -> &'static str {
        "channel-sum"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        let (_, c, h, w) = dims4(l, "input")?;
        fn sum<T: WithDType>(x: &[T], c: usize, hw: usize) -> Vec<T> {
            let mut out = vec![T::zero(); c];
            for (k, plane) in x.chunks_exact(hw).enumerate() {
                let mut acc = T::zero();
                for &v in plane {
                    acc += v;
                }
                out[k % c] += acc;
            }
            out
        }
        let out = match s {
            CpuStorage::F32(_) => CpuStorage::F32(sum(contiguous::<f32>(s, l, "input")?, c, h * w)),
            CpuStorage::F64(_) => CpuStorage::F64(sum(contiguous::<f64>(s, l, "input")?, c, h * w)),
            _ => bail!("channel sum: only f32 and f64 are supported"),
        };
        Ok((out, Shape::from(c)))
    }
}

/// `x * W + b` (then ReLU when `relu`) for `x: (B, Cin, H, W)`, `weight: (Cout, Cin, k, k)`,
/// `bias: (Cout)` and zero padding `pad`.
pub fn conv2d_bias(x: &Tensor, weight: &Tensor, bias: &Tensor, pad: usize, relu: bool) -> Result<Tensor> {
    x.contiguous()?.apply_op3(&weight.contiguous()?, &bias.contiguous()?, ConvBiasOp { pad, relu })
}

/// Nearest-neighbor upsampling by an integer factor; `adjoint` sums each block instead.
struct UpsampleOp {
    factor: usize,
    adjoint: bool,
}

impl UpsampleOp {
    fn run<T: WithDType>(&self, x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
        let f = self.factor;
        if !self.adjoint {
            let (ho, wo) = (h * f, w * f);
            let mut out = Vec::with_capacity(planes * ho * wo);
            for p in 0..planes {
                for i in 0..h {
                    let row = &x[(p * h + i) * w..(p * h + i + 1) * w];
                    let start = out.len();
                    for &v in row {
                        out.extend(std::iter::repeat_n(v, f));
                    }
                    for _ in 1..f {
                        out.extend_from_within(start..start + wo);
                    }
                }
            }
            out
        } else {
            let (ho, wo) = (h / f, w / f);
            let mut out = vec![T::zero(); planes * ho * wo];
            for p in 0..planes {
                for i in 0..h {
                    let dst = &mut out[(p * ho + i / f) * wo..(p * ho + i / f + 1) * wo];
                    for (j, &v) in x[(p * h + i) * w..(p * h + i + 1) * w].iter().enumerate() {
                        dst[j / f] += v;
                    }
                }
            }
            out
        }
    }
}

impl CustomOp1 for UpsampleOp {
    fn name(&self) -> &'static str {
        "upsample-nearest"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        let (b, c, h, w) = dims4(l, "input")?;
        let f = self.factor;
        let shape = if self.adjoint {
            if h % f != 0 || w % f != 0 {
                bail!("upsample adjoint: {h}x{w} not divisible by {f}");
            }
            Shape::from((b, c, h / f, w / f))
        } else {
            Shape::from((b, c, h * f, w * f))
        };
        let out = match s {
            CpuStorage::F32(_) => CpuStorage::F32(self.run(contiguous::<f32>(s, l, "input")?, b * c, h, w)),
            CpuStorage::F64(_) => CpuStorage::F64(self.run(contiguous::<f64>(s, l, "input")?, b * c, h, w)),
            _ => bail!("upsample: only f32 and f64 are supported"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        let op = UpsampleOp { factor: self.factor, adjoint: !self.adjoint };
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&op)?))
    }
}

/// Nearest-neighbor upsampling by an integer factor; the backward pass sums each block.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(x.clone());
    }
    x.contiguous()?.apply_op1(UpsampleOp { factor, adjoint: false })
}

/// Index of `i` in `0..n` after mirror reflection without edge repetition.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Separable `(2r+1)^2` mean filter over each plane with reflected borders. `adjoint`
/// applies the transposed operator, which is the backward pass.
struct BoxFilterOp {
    radius: usize,
    adjoint: bool,
}

impl BoxFilterOp {
    fn run<T: WithDType>(&self, x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
        let r = self.radius as isize;
        let inv = T::from_f64(1.0 / (2 * self.radius + 1) as f64);
        let taps = |n: usize| -> Vec<Vec<usize>> {
            (0..n as isize).map(|i| (-r..=r).map(|d| reflect_index(i + d, n)).collect()).collect()
        };
        let (th, tw) = (taps(h), taps(w));
        let mut out = vec![T::zero(); x.len()];
        let mut tmp = vec![T::zero(); h * w];
        for p in 0..planes {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * h * w..(p + 1) * h * w];
            tmp.iter_mut().for_each(|v| *v = T::zero());
            if !self.adjoint {
                for i in 0..h {
                    for j in 0..w {
                        let mut acc = T::zero();
                        for &jj in &tw[j] {
                            acc += src[i * w + jj];
                        }
                        tmp[i * w + j] = acc * inv;
                    }
                }
                for i in 0..h {
                    for &ii in &th[i] {
                        for j in 0..w {
                            dst[i * w + j] += tmp[ii * w + j];
                        }
                    }
                    for j in 0..w {
                        dst[i * w + j] *= inv;
                    }
                }
            } else {
                for i in 0..h {
                    for &ii in &th[i] {
                        for j in 0..w {
                            tmp[ii * w + j] += src[i * w + j] * inv;
                        }
                    }
                }
                for i in 0..h {
                    for j in 0..w {
                        let g = tmp[i * w + j] * inv;
                        for &jj in &tw[j] {
                            dst[i * w + jj] += g;
                        }
                    }
                }
            }
        }
        out
    }
}

impl CustomOp1 for BoxFilterOp {
    fn name(&self) -> &'static str {
        "box-filter-reflect"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        let (b, c, h, w) = dims4(l, "input")?;
        let out = match s {
            CpuStorage::F32(_) => CpuStorage::F32(self.run(contiguous::<f32>(s, l, "input")?, b * c, h, w)),
            CpuStorage::F64(_) => CpuStorage::F64(self.run(contiguous::<f64>(s, l, "input")?, b * c, h, w)),
            _ => bail!("box filter: only f32 and f64 are supported"),
        };
        Ok((out, l.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        let op = BoxFilterOp { radius: self.radius, adjoint: !self.adjoint };
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&op)?))
    }
}

/// Mean over the `(2 radius + 1)` square window centered on each pixel of every
/// `(B, C)` plane, with mirror-reflected borders.
pub fn box_filter_reflect(x: &Tensor, radius: usize) -> Result<Tensor> {
    x.contiguous()?.apply_op1(BoxFilterOp { radius, adjoint: false })
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped. The backward pass
/// routes each gradient to the window maximum.
pub fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (ho, wo) = (h / 2, w / 2);
    let x = if h % 2 == 0 && w % 2 == 0 { x.clone() } else { x.narrow(2, 0, 2 * ho)?.narrow(3, 0, 2 * wo)? };
    x.contiguous()?.reshape((b, c, ho, 2, wo, 2))?.max(5)?.max(3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};

    /// Direct seven-loop convolution.
    fn naive_conv(x: &[f64], wt: &[f64], b: usize, cin: usize, h: usize, w: usize, cout: usize, k: usize, p: usize) -> Vec<f64> {
        let (ho, wo) = (h + 2 * p - k + 1, w + 2 * p - k + 1);
        let mut out = vec![0.0; b * cout * ho * wo];
        for n in 0..b {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = 0.0;
                        for ci in 0..cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let (iy, ix) = (oy as isize + ki as isize - p as isize, ox as isize + kj as isize - p as isize);
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        s += x[((n * cin + ci) * h + iy as usize) * w + ix as usize]
                                            * wt[((co * cin + ci) * k + ki) * k + kj];
                                    }
                                }
                            }
                        }
                        out[((n * cout + co) * ho + oy) * wo + ox] = s;
                    }
                }
            }
        }
        out
    }

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn forward_matches_naive() {
        for &(b, cin, h, w, cout, k, p) in &[(2, 3, 5, 7, 4, 3, 1), (1, 2, 4, 4, 3, 1, 0), (1, 1, 6, 5, 2, 3, 0), (1, 2, 3, 3, 1, 5, 2)] {
            let xv = rand_vec(b * cin * h * w, 1);
            let wv = rand_vec(cout * cin * k * k, 2);
            let x = Tensor::from_vec(xv.clone(), (b, cin, h, w), &Device::Cpu).unwrap();
            let wt = Tensor::from_vec(wv.clone(), (cout, cin, k, k), &Device::Cpu).unwrap();
            let got: Vec<f64> = conv2d(&x, &wt, p).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            let want = naive_conv(&xv, &wv, b, cin, h, w, cout, k, p);
            for (g, e) in got.iter().zip(&want) {
                assert!((g - e).abs() < 1e-12);
            }
            let got32: Vec<f32> =
                conv2d(&x.to_dtype(DType::F32).unwrap(), &wt.to_dtype(DType::F32).unwrap(), p).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            for (g, e) in got32.iter().zip(&want) {
                assert!((*g as f64 - e).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (b, cin, h, w, cout, k, p) = (2, 2, 4, 5, 3, 3, 1);
        let xv = rand_vec(b * cin * h * w, 3);
        let wv = rand_vec(cout * cin * k * k, 4);
        let rv = rand_vec(b * cout * h * w, 5);
        let x = Var::from_vec(xv.clone(), (b, cin, h, w), &Device::Cpu).unwrap();
        let wt = Var::from_vec(wv.clone(), (cout, cin, k, k), &Device::Cpu).unwrap();
        let r = Tensor::from_vec(rv.clone(), (b, cout, h, w), &Device::Cpu).unwrap();
        let loss = (conv2d(&x, &wt, p).unwrap() * &r).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let gx: Vec<f64> = grads.get(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let gw: Vec<f64> = grads.get(&wt).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let objective = |xv: &[f64], wv: &[f64]| -> f64 {
            naive_conv(xv, wv, b, cin, h, w, cout, k, p).iter().zip(&rv).map(|(a, b)| a * b).sum()
        };
        let eps = 1e-6;
        for i in 0..xv.len() {
            let (mut a, mut c) = (xv.clone(), xv.clone());
            a[i] += eps;
            c[i] -= eps;
            let fd = (objective(&a, &wv) - objective(&c, &wv)) / (2.0 * eps);
            assert!((fd - gx[i]).abs() < 1e-6, "x[{i}] {fd} vs {}", gx[i]);
        }
        for i in 0..wv.len() {
            let (mut a, mut c) = (wv.clone(), wv.clone());
            a[i] += eps;
            c[i] -= eps;
            let fd = (objective(&xv, &a) - objective(&xv, &c)) / (2.0 * eps);
            assert!((fd - gw[i]).abs() < 1e-6, "w[{i}] {fd} vs {}", gw[i]);
        }
    }

    #[test]
    fn pointwise_gradients() {
        let x = Var::from_vec(rand_vec(2 * 3 * 2 * 2, 6), (2, 3, 2, 2), &Device::Cpu).unwrap();
        let wt = Var::from_vec(rand_vec(4 * 3, 7), (4, 3, 1, 1), &Device::Cpu).unwrap();
        let ours = conv2d(&x, &wt, 0).unwrap();
        let reference = x.conv2d(&wt, 0, 1, 1, 1).unwrap();
        let diff = (&ours - &reference).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12);
        let g1 = ours.sqr().unwrap().sum_all().unwrap().backward().unwrap();
        let g2 = reference.sqr().unwrap().sum_all().unwrap().backward().unwrap();
        for v in [&x, &wt] {
            let d = (g1.get(v).unwrap() - g2.get(v).unwrap()).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
            assert!(d < 1e-10);
        }
    }

    #[test]
    fn upsample_forward_and_backward() {
        let x = Var::from_vec(vec![1.0f64, 2.0, 3.0, 4.0], (1, 1, 2, 2), &Device::Cpu).unwrap();
        let up = upsample_nearest(&x, 2).unwrap();
        let rows: Vec<Vec<f64>> = up.squeeze(0).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
        assert_eq!(rows[0], vec![1.0, 1.0, 2.0, 2.0]);
        assert_eq!(rows[3], vec![3.0, 3.0, 4.0, 4.0]);
        let weights = Tensor::arange(0f64, 16.0, &Device::Cpu).unwrap().reshape((1, 1, 4, 4)).unwrap();
        let g = (up * weights).unwrap().sum_all().unwrap().backward().unwrap();
        let gx: Vec<f64> = g.get(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        // Sum of the weights in each 2x2 block.
        assert_eq!(gx, vec![0.0 + 1.0 + 4.0 + 5.0, 2.0 + 3.0 + 6.0 + 7.0, 8.0 + 9.0 + 12.0 + 13.0, 10.0 + 11.0 + 14.0 + 15.0]);
    }

    #[test]
    fn fused_bias_relu_matches_composition() {
        let x = Var::from_tensor(&Tensor::from_vec(rand_vec(180, 40), (2, 3, 6, 5), &Device::Cpu).unwrap()).unwrap();
        let w = Var::from_tensor(&Tensor::from_vec(rand_vec(108, 41), (4, 3, 3, 3), &Device::Cpu).unwrap()).unwrap();
        let b = Var::from_tensor(&Tensor::from_vec(rand_vec(4, 42), 4, &Device::Cpu).unwrap()).unwrap();
        let probe = Tensor::from_vec(rand_vec(240, 43), (2, 4, 6, 5), &Device::Cpu).unwrap();
        let run = |fused: bool| {
            let y = if fused {
                conv2d_bias(x.as_tensor(), w.as_tensor(), b.as_tensor(), 1, true).unwrap()
            } else {
                let y = conv2d(x.as_tensor(), w.as_tensor(), 1).unwrap();
                y.broadcast_add(&b.as_tensor().reshape((1, 4, 1, 1)).unwrap()).unwrap().relu().unwrap()
            };
            let grads = (&y * &probe).unwrap().sum_all().unwrap().backward().unwrap();
            let flat = |t: &Tensor| t.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            [flat(&y), flat(grads.get(x.as_tensor()).unwrap()), flat(grads.get(w.as_tensor()).unwrap()), flat(grads.get(b.as_tensor()).unwrap())]
        };
        for (a, b) in run(true).iter().zip(run(false).iter()) {
            assert_eq!(a.len(), b.len());
            for (p, q) in a.iter().zip(b) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..8).map(|i| reflect_index(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect_index(-2, 2), 0);
        assert_eq!(reflect_index(7, 1), 0);
    }

    #[test]
    fn box_filter_matches_direct_sum_and_adjoint() {
        let (h, w) = (5, 7);
        let data: Vec<f64> = (0..2 * h * w).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
        let x = Var::from_vec(data.clone(), (1, 2, h, w), &Device::Cpu).unwrap();
        let y = box_filter_reflect(x.as_tensor(), 2).unwrap();
        let got = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for p in 0..2 {
            for i in 0..h as isize {
                for j in 0..w as isize {
                    let mut s = 0.0;
                    for di in -2..=2 {
                        for dj in -2..=2 {
                            s += data[p * h * w + reflect_index(i + di, h) * w + reflect_index(j + dj, w)];
                        }
                    }
                    assert!((got[p * h * w + i as usize * w + j as usize] - s / 25.0).abs() < 1e-12);
                }
            }
        }
        // <A x, g> == <x, A^T g> for the backward pass.
        let g: Vec<f64> = (0..2 * h * w).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let gt = Tensor::from_vec(g.clone(), (1, 2, h, w), &Device::Cpu).unwrap();
        let grads = (y * &gt).unwrap().sum_all().unwrap().backward().unwrap();
        let gx = grads.get(x.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let lhs: f64 = got.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = data.iter().zip(&gx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn max_pool_forward_and_backward() {
        let data: Vec<f64> = vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 7.0, 1.0, 9.0, 8.0, 6.0, 2.0];
        let x = Var::from_vec(data, (1, 1, 3, 4), &Device::Cpu).unwrap();
        let y = max_pool2(x.as_tensor()).unwrap();
        assert_eq!(y.flatten_all().unwrap().to_vec1::<f64>().unwrap(), vec![5.0, 7.0]);
        let g = y.affine(3.0, 0.0).unwrap().sum_all().unwrap().backward().unwrap();
        let gx = g.get(x.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(gx, vec![0.0, 3.0, 0.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
