use super::scalar::{gemm, View};
use super::{LayerCache, LayerSpec, Scalar};

/// Forward kernel of one layer over a whole batch. Shapes are per sample.
pub(crate) fn forward<T: Scalar>(
    layer: &LayerSpec,
    in_shape: &[usize],
    out_shape: &[usize],
    params: &[T],
    batch: usize,
    x: Vec<T>,
) -> (Vec<T>, LayerCache<T>) {
    let n_in: usize = in_shape.iter().product();
    let n_out: usize = out_shape.iter().product();
    match *layer {
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        } => {
            let geo = ConvGeom::new(in_shape, out_shape, kernel, stride, padding);
            let ckk = in_ch * kernel * kernel;
            let hw = geo.ho * geo.wo;
            let (w, b) = params.split_at(out_ch * ckk);
            let mut cols = vec![T::ZERO; batch * ckk * hw];
            let mut out = vec![T::ZERO; batch * n_out];
            for s in 0..batch {
                let col = &mut cols[s * ckk * hw..(s + 1) * ckk * hw];
                geo.im2col(&x[s * n_in..(s + 1) * n_in], col);
                let y = &mut out[s * n_out..(s + 1) * n_out];
                for (o, row) in y.chunks_exact_mut(hw).enumerate() {
                    row.fill(b[o]);
                }
                gemm(T::ONE, View::row_major(w, out_ch, ckk), View::row_major(col, ckk, hw), T::ONE, y);
            }
            (out, LayerCache::Conv { cols })
        }
        LayerSpec::MaxPool { size } => {
            let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
            let (ho, wo) = (out_shape[1], out_shape[2]);
            let mut out = Vec::with_capacity(batch * n_out);
            let mut argmax = Vec::with_capacity(batch * n_out);
            for s in 0..batch {
                let xs = &x[s * n_in..(s + 1) * n_in];
                for ch in 0..c {
                    for i in 0..ho {
                        for j in 0..wo {
                            let mut best = ch * h * w + i * size * w + j * size;
                            for di in 0..size {
                                for dj in 0..size {
                                    let idx = ch * h * w + (i * size + di) * w + j * size + dj;
                                    if xs[idx] > xs[best] {
                                        best = idx;
                                    }
                                }
                            }
                            out.push(xs[best]);
                            argmax.push(best as u32);
                        }
                    }
                }
            }
            (out, LayerCache::Pool { argmax })
        }
        LayerSpec::Relu => {
            let out: Vec<T> = x.into_iter().map(|v| if v > T::ZERO { v } else { T::ZERO }).collect();
            (out.clone(), LayerCache::Relu { output: out })
        }
        LayerSpec::Flatten => (x, LayerCache::None),
        LayerSpec::Dense { inputs, outputs } => {
            let (w, b) = params.split_at(outputs * inputs);
            let mut out = Vec::with_capacity(batch * outputs);
            for _ in 0..batch {
                out.extend_from_slice(b);
            }
            gemm(
                T::ONE,
                View::row_major(&x, batch, inputs),
                View::row_major(w, outputs, inputs).t(),
                T::ONE,
                &mut out,
            );
            (out, LayerCache::Dense { input: x })
        }
        LayerSpec::SoftmaxCrossEntropy { classes } => {
            let mut probs = x;
            for row in probs.chunks_exact_mut(classes) {
                let mut max = row[0];
                for &v in row.iter() {
                    if v > max {
                        max = v;
                    }
                }
                let mut sum = T::ZERO;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v = *v / sum;
                }
            }
            (probs.clone(), LayerCache::Softmax { probs })
        }
    }
}

/// Backward kernel: accumulates parameter gradients into `pgrad` and returns
/// the input gradient (empty when `need_dx` is false).
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    layer: &LayerSpec,
    in_shape: &[usize],
    out_shape: &[usize],
    params: &[T],
    batch: usize,
    cache: &LayerCache<T>,
    dy: Vec<T>,
    pgrad: &mut [T],
    need_dx: bool,
) -> Vec<T> {
    let n_in: usize = in_shape.iter().product();
    let n_out: usize = out_shape.iter().product();
    match (*layer, cache) {
        (
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
            },
            LayerCache::Conv { cols },
        ) => {
            let geo = ConvGeom::new(in_shape, out_shape, kernel, stride, padding);
            let ckk = in_ch * kernel * kernel;
            let hw = geo.ho * geo.wo;
            let (w, _) = params.split_at(out_ch * ckk);
            let (gw, gb) = pgrad.split_at_mut(out_ch * ckk);
            let mut dx = if need_dx { vec![T::ZERO; batch * n_in] } else { Vec::new() };
            let mut dcol = vec![T::ZERO; if need_dx { ckk * hw } else { 0 }];
            for s in 0..batch {
                let g = &dy[s * n_out..(s + 1) * n_out];
                let col = &cols[s * ckk * hw..(s + 1) * ckk * hw];
                gemm(T::ONE, View::row_major(g, out_ch, hw), View::row_major(col, ckk, hw).t(), T::ONE, gw);
                for (o, row) in g.chunks_exact(hw).enumerate() {
                    let mut acc = T::ZERO;
                    for &v in row {
                        acc += v;
                    }
                    gb[o] += acc;
                }
                if need_dx {
                    gemm(
                        T::ONE,
                        View::row_major(w, out_ch, ckk).t(),
                        View::row_major(g, out_ch, hw),
                        T::ZERO,
                        &mut dcol,
                    );
                    geo.col2im(&dcol, &mut dx[s * n_in..(s + 1) * n_in]);
                }
            }
            dx
        }
        (LayerSpec::MaxPool { .. }, LayerCache::Pool { argmax }) => {
            let mut dx = vec![T::ZERO; batch * n_in];
            for s in 0..batch {
                for k in 0..n_out {
                    let idx = s * n_out + k;
                    dx[s * n_in + argmax[idx] as usize] += dy[idx];
                }
            }
            dx
        }
        (LayerSpec::Relu, LayerCache::Relu { output }) => dy
            .into_iter()
            .zip(output)
            .map(|(g, &o)| if o > T::ZERO { g } else { T::ZERO })
            .collect(),
        (LayerSpec::Flatten, _) => dy,
        (LayerSpec::Dense { inputs, outputs }, LayerCache::Dense { input }) => {
            let (gw, gb) = pgrad.split_at_mut(outputs * inputs);
            gemm(
                T::ONE,
                View::row_major(&dy, batch, outputs).t(),
                View::row_major(input, batch, inputs),
                T::ONE,
                gw,
            );
            for row in dy.chunks_exact(outputs) {
                for (b, &g) in gb.iter_mut().zip(row) {
                    *b += g;
                }
            }
            if !need_dx {
                return Vec::new();
            }
            let mut dx = vec![T::ZERO; batch * inputs];
            gemm(
                T::ONE,
                View::row_major(&dy, batch, outputs),
                View::row_major(&params[..outputs * inputs], outputs, inputs),
                T::ZERO,
                &mut dx,
            );
            dx
        }
        (LayerSpec::SoftmaxCrossEntropy { classes }, LayerCache::Softmax { probs }) => {
            // Full softmax Jacobian: dz = p * (g - <g, p>).
            let mut dx = Vec::with_capacity(dy.len());
            for (g, p) in dy.chunks_exact(classes).zip(probs.chunks_exact(classes)) {
                let mut dot = T::ZERO;
                for (&a, &b) in g.iter().zip(p) {
                    dot += a * b;
                }
                dx.extend(g.iter().zip(p).map(|(&a, &b)| b * (a - dot)));
            }
            dx
        }
        _ => unreachable!("cache does not match layer {layer:?}"),
    }
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn new(in_shape: &[usize], out_shape: &[usize], k: usize, stride: usize, pad: usize) -> Self {
        ConvGeom {
            c: in_shape[0],
            h: in_shape[1],
            w: in_shape[2],
            ho: out_shape[1],
            wo: out_shape[2],
            k,
            stride,
            pad,
        }
    }

    /// Row `(c, ki, kj)`, column `(i, j)` holds `x[c, i*s + ki - p, j*s + kj - p]`
    /// or zero outside the image.
    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T]) {
        let hw = self.ho * self.wo;
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = ((c * self.k + ki) * self.k + kj) * hw;
                    for i in 0..self.ho {
                        let y = (i * self.stride + ki) as isize - self.pad as isize;
                        let dst = &mut col[row + i * self.wo..row + (i + 1) * self.wo];
                        if y < 0 || y >= self.h as isize {
                            dst.fill(T::ZERO);
                            continue;
                        }
                        let src = &x[(c * self.h + y as usize) * self.w..(c * self.h + y as usize + 1) * self.w];
                        for (j, d) in dst.iter_mut().enumerate() {
                            let xx = (j * self.stride + kj) as isize - self.pad as isize;
                            *d = if xx < 0 || xx >= self.w as isize { T::ZERO } else { src[xx as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`], accumulating into `x`.
    fn col2im<T: Scalar>(&self, col: &[T], x: &mut [T]) {
        let hw = self.ho * self.wo;
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = ((c * self.k + ki) * self.k + kj) * hw;
                    for i in 0..self.ho {
                        let y = (i * self.stride + ki) as isize - self.pad as isize;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let base = (c * self.h + y as usize) * self.w;
                        for j in 0..self.wo {
                            let xx = (j * self.stride + kj) as isize - self.pad as isize;
                            if xx >= 0 && xx < self.w as isize {
                                x[base + xx as usize] += col[row + i * self.wo + j];
                            }
                        }
                    }
                }
            }
        }
    }
}
