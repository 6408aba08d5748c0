//! Dense `f64` tensors and the numeric kernels behind the network layers.
//!
//! Activations are `[channels, height, width]`, row-major. Convolution
//! weights are `[out, in, k, k]`. Kernels are shared by the taped and eager
//! forward paths, so both produce bitwise-identical values.

use serde::{Deserialize, Serialize};

use crate::field::ScalarField;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?}"
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(vec![1], vec![v])
    }

    /// Stacks fields of equal dimensions as channels.
    pub fn from_fields(fields: &[&ScalarField]) -> Self {
        let (w, h) = fields[0].dims();
        let mut data = Vec::with_capacity(fields.len() * w * h);
        for f in fields {
            assert_eq!(f.dims(), (w, h));
            data.extend_from_slice(f.values());
        }
        Self::new(vec![fields.len(), h, w], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(channels, height, width)` of an activation tensor.
    pub fn chw(&self) -> (usize, usize, usize) {
        assert_eq!(
            self.shape.len(),
            3,
            "expected [c, h, w], got {:?}",
            self.shape
        );
        (self.shape[0], self.shape[1], self.shape[2])
    }

    /// Channel `c` of an activation tensor as a field.
    pub fn channel_field(&self, c: usize) -> ScalarField {
        let (_, h, w) = self.chw();
        ScalarField::new(w, h, self.data[c * h * w..(c + 1) * h * w].to_vec())
            .expect("activation values are finite")
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Zero-padded, stride-1 convolution with an odd square kernel.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let (cin, h, w) = input.chw();
    let (cout, wcin, k) = (weight.shape[0], weight.shape[1], weight.shape[2]);
    assert_eq!(wcin, cin, "conv expects {wcin} input channels, got {cin}");
    assert_eq!(bias.shape, vec![cout]);
    let pad = (k / 2) as isize;
    let plane = h * w;
    let mut out = vec![0.0; cout * plane];
    for o in 0..cout {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(bias.data[o]);
        for i in 0..cin {
            let src = &input.data[i * plane..(i + 1) * plane];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = valid_range(dy, h);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = valid_range(dx, w);
                    let wv = weight.data[((o * cin + i) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let srow = &src[sy * w..(sy + 1) * w];
                        let drow = &mut dst[y * w..(y + 1) * w];
                        let sx0 = (x0 as isize + dx) as usize;
                        for (d, s) in drow[x0..x1].iter_mut().zip(&srow[sx0..sx0 + (x1 - x0)]) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![cout, h, w], out)
}

/// Output rows/cols `[lo, hi)` whose shifted source index stays in bounds.
#[inline]
fn valid_range(d: isize, n: usize) -> (usize, usize) {
    let lo = ((-d).max(0) as usize).min(n);
    let hi = ((n as isize - d.max(0)).max(0) as usize).max(lo);
    (lo, hi)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (cin, h, w) = input.chw();
    let (cout, _, k) = (weight.shape[0], weight.shape[1], weight.shape[2]);
    let pad = (k / 2) as isize;
    let plane = h * w;
    let mut d_in = vec![0.0; cin * plane];
    let mut d_w = vec![0.0; weight.data.len()];
    let mut d_b = vec![0.0; cout];
    for o in 0..cout {
        let g = &grad_out.data[o * plane..(o + 1) * plane];
        d_b[o] = g.iter().sum();
        for i in 0..cin {
            let src = &input.data[i * plane..(i + 1) * plane];
            let din = &mut d_in[i * plane..(i + 1) * plane];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = valid_range(dy, h);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = valid_range(dx, w);
                    let widx = ((o * cin + i) * k + ky) * k + kx;
                    let wv = weight.data[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let n = x1 - x0;
                        let grow = &g[y * w + x0..y * w + x1];
                        let srow = &src[sy * w + sx0..sy * w + sx0 + n];
                        acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                        let drow = &mut din[sy * w + sx0..sy * w + sx0 + n];
                        for (d, gv) in drow.iter_mut().zip(grow) {
                            *d += wv * gv;
                        }
                    }
                    d_w[widx] += acc;
                }
            }
        }
    }
    (
        Tensor::new(input.shape.clone(), d_in),
        Tensor::new(weight.shape.clone(), d_w),
        Tensor::new(vec![cout], d_b),
    )
}

pub fn tanh(x: &Tensor) -> Tensor {
    Tensor::new(x.shape.clone(), x.data.iter().map(|v| v.tanh()).collect())
}

/// `grad * (1 - tanh^2)` given the forward output.
pub fn tanh_backward(out: &Tensor, grad: &Tensor) -> Tensor {
    Tensor::new(
        out.shape.clone(),
        out.data
            .iter()
            .zip(&grad.data)
            .map(|(y, g)| g * (1.0 - y * y))
            .collect(),
    )
}

/// 2x2 average pooling. Spatial dimensions must be even.
pub fn avg_pool2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.chw();
    assert!(
        h % 2 == 0 && w % 2 == 0,
        "pooling needs even dimensions, got {w}x{h}"
    );
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = &x.data[ch * h * w..];
        for y in 0..oh {
            for xx in 0..ow {
                let a = src[2 * y * w + 2 * xx] + src[2 * y * w + 2 * xx + 1];
                let b = src[(2 * y + 1) * w + 2 * xx] + src[(2 * y + 1) * w + 2 * xx + 1];
                out[ch * oh * ow + y * ow + xx] = 0.25 * (a + b);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

pub fn avg_pool2_backward(input_shape: &[usize], grad: &Tensor) -> Tensor {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[ch * h * w + y * w + x] = 0.25 * grad.data[ch * oh * ow + (y / 2) * ow + x / 2];
            }
        }
    }
    Tensor::new(input_shape.to_vec(), out)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.chw();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                out[ch * oh * ow + y * ow + xx] = x.data[ch * h * w + (y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

pub fn upsample2_backward(input_shape: &[usize], grad: &Tensor) -> Tensor {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                out[ch * h * w + (y / 2) * w + x / 2] += grad.data[ch * oh * ow + y * ow + x];
            }
        }
    }
    Tensor::new(input_shape.to_vec(), out)
}

/// Channel-wise concatenation.
pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    let (ca, h, w) = a.chw();
    let (cb, hb, wb) = b.chw();
    assert_eq!((h, w), (hb, wb), "concat of mismatched planes");
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::new(vec![ca + cb, h, w], data)
}

pub fn scale(x: &Tensor, s: f64) -> Tensor {
    Tensor::new(x.shape.clone(), x.data.iter().map(|v| v * s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    /// Direct definition of zero-padded correlation, used as an oracle.
    fn conv_reference(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
        let (cin, h, w) = input.chw();
        let (cout, k) = (weight.shape[0], weight.shape[2]);
        let pad = (k / 2) as isize;
        let mut out = Tensor::zeros(vec![cout, h, w]);
        for o in 0..cout {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = bias.data[o];
                    for i in 0..cin {
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let (sy, sx) = (y + ky - pad, x + kx - pad);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += weight.data
                                    [((o * cin + i) * k + ky as usize) * k + kx as usize]
                                    * input.data[(i * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out.data[(o * h + y as usize) * w + x as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_reference() {
        for k in [1, 3] {
            let input = Tensor::new(vec![2, 5, 6], lcg(1, 60));
            let weight = Tensor::new(vec![3, 2, k, k], lcg(2, 6 * k * k));
            let bias = Tensor::new(vec![3], lcg(3, 3));
            let got = conv2d(&input, &weight, &bias);
            let want = conv_reference(&input, &weight, &bias);
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        let input = Tensor::new(vec![2, 4, 6], lcg(4, 48));
        let weight = Tensor::new(vec![3, 2, 3, 3], lcg(5, 54));
        let bias = Tensor::new(vec![3], lcg(6, 3));
        let g = Tensor::new(vec![3, 4, 6], lcg(7, 72));
        let (d_in, d_w, d_b) = conv2d_backward(&input, &weight, &g);
        let objective = |inp: &Tensor, wt: &Tensor, b: &Tensor| -> f64 {
            conv2d(inp, wt, b)
                .data
                .iter()
                .zip(&g.data)
                .map(|(a, b)| a * b)
                .sum()
        };
        let h = 1e-6;
        let check = |analytic: f64, plus: f64, minus: f64| {
            let fd = (plus - minus) / (2.0 * h);
            assert!((fd - analytic).abs() < 1e-7, "{fd} vs {analytic}");
        };
        for idx in [0, 7, 23, 47] {
            let (mut p, mut m) = (input.clone(), input.clone());
            p.data[idx] += h;
            m.data[idx] -= h;
            check(
                d_in.data[idx],
                objective(&p, &weight, &bias),
                objective(&m, &weight, &bias),
            );
        }
        for idx in [0, 13, 53] {
            let (mut p, mut m) = (weight.clone(), weight.clone());
            p.data[idx] += h;
            m.data[idx] -= h;
            check(
                d_w.data[idx],
                objective(&input, &p, &bias),
                objective(&input, &m, &bias),
            );
        }
        let (mut p, mut m) = (bias.clone(), bias.clone());
        p.data[1] += h;
        m.data[1] -= h;
        check(
            d_b.data[1],
            objective(&input, &weight, &p),
            objective(&input, &weight, &m),
        );
    }

    #[test]
    fn pooling_and_upsampling_are_adjoint() {
        let x = Tensor::new(vec![2, 4, 6], lcg(8, 48));
        let g = Tensor::new(vec![2, 2, 3], lcg(9, 12));
        let dot =
            |a: &Tensor, b: &Tensor| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>();
        assert!(
            (dot(&avg_pool2(&x), &g) - dot(&x, &avg_pool2_backward(x.shape(), &g))).abs() < 1e-12
        );
        let big = Tensor::new(vec![2, 4, 6], lcg(10, 48));
        assert!(
            (dot(&upsample2(&g), &big) - dot(&g, &upsample2_backward(g.shape(), &big))).abs()
                < 1e-12
        );
    }
}
