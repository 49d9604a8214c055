//! Specialized kernels for the two convolution shapes that dominate the
//! network: point-wise (a matrix product per image) and same-size depth-wise
//! (one padded plane per channel). Storage stays `f32`; every sum is carried
//! in `f64` and rounded once at the end.

use rayon::prelude::*;

/// `y += alpha * x`
#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (a, &b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

/// Dot product with four independent partial sums so it vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

fn widen(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| f64::from(v)).collect()
}

fn narrow(src: &[f64], dst: &mut [f32]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = s as f32;
    }
}

/// `c = a * b + beta * c` for row-major operands given by strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel reads or writes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Point-wise shapes: weight `[cout, cin]`, activations `[batch, c, hw]`.
#[derive(Clone, Copy)]
pub(super) struct Pointwise {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub hw: usize,
}

impl Pointwise {
    pub fn forward(&self, x: &[f32], w: &[f32], bias: Option<&[f32]>) -> Vec<f32> {
        let Pointwise { cin, cout, hw, .. } = *self;
        let w = widen(w);
        let mut out = vec![0.0f32; self.batch * cout * hw];
        out.par_chunks_mut(cout * hw).enumerate().for_each(|(b, ob)| {
            let mut acc = vec![0.0f64; cout * hw];
            if let Some(bias) = bias {
                for (row, &v) in acc.chunks_exact_mut(hw).zip(bias) {
                    row.fill(f64::from(v));
                }
            }
            let xb = widen(&x[b * cin * hw..][..cin * hw]);
            gemm(cout, cin, hw, &w, (cin, 1), &xb, (hw, 1), 1.0, &mut acc);
            narrow(&acc, ob);
        });
        out
    }

    pub fn grad_input(&self, w: &[f32], gy: &[f32]) -> Vec<f32> {
        let Pointwise { cin, cout, hw, .. } = *self;
        let w = widen(w);
        let mut gx = vec![0.0f32; self.batch * cin * hw];
        gx.par_chunks_mut(cin * hw).enumerate().for_each(|(b, gb)| {
            let gyb = widen(&gy[b * cout * hw..][..cout * hw]);
            let mut acc = vec![0.0f64; cin * hw];
            gemm(cin, cout, hw, &w, (1, cin), &gyb, (hw, 1), 0.0, &mut acc);
            narrow(&acc, gb);
        });
        gx
    }

    pub fn grad_weight(&self, x: &[f32], gy: &[f32]) -> Vec<f32> {
        let Pointwise { cin, cout, hw, .. } = *self;
        let mut acc = vec![0.0f64; cout * cin];
        for b in 0..self.batch {
            let gyb = widen(&gy[b * cout * hw..][..cout * hw]);
            let xb = widen(&x[b * cin * hw..][..cin * hw]);
            gemm(cout, hw, cin, &gyb, (hw, 1), &xb, (1, hw), 1.0, &mut acc);
        }
        let mut gw = vec![0.0f32; cout * cin];
        narrow(&acc, &mut gw);
        gw
    }
}

/// Depth-wise `k x k` convolution with dilation `d` and same-size output.
#[derive(Clone, Copy)]
pub(super) struct Depthwise {
    pub batch: usize,
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl Depthwise {
    fn padded_dims(&self) -> (usize, usize) {
        (self.h + 2 * self.padding, self.w + 2 * self.padding)
    }

    fn pad(&self, plane: &[f32], buf: &mut Vec<f64>) {
        let (ph, pw) = self.padded_dims();
        buf.clear();
        buf.resize(ph * pw, 0.0);
        for (y, row) in plane.chunks_exact(self.w).enumerate() {
            let start = (y + self.padding) * pw + self.padding;
            for (d, &v) in buf[start..start + self.w].iter_mut().zip(row) {
                *d = f64::from(v);
            }
        }
    }

    pub fn forward(&self, x: &[f32], weight: &[f32], bias: Option<&[f32]>) -> Vec<f32> {
        let Depthwise { h, w, k, dilation: d, .. } = *self;
        let hw = h * w;
        let (_, pw) = self.padded_dims();
        let mut out = vec![0.0f32; self.batch * self.channels * hw];
        out.par_chunks_mut(hw).enumerate().for_each_init(
            || (Vec::new(), vec![0.0f64; w]),
            |(padded, acc), (plane, op)| {
                let c = plane % self.channels;
                self.pad(&x[plane * hw..][..hw], padded);
                let taps = widen(&weight[c * k * k..][..k * k]);
                let b0 = bias.map_or(0.0, |b| f64::from(b[c]));
                for (y, row) in op.chunks_exact_mut(w).enumerate() {
                    acc.fill(b0);
                    for ky in 0..k {
                        let src = &padded[(y + ky * d) * pw..];
                        for kx in 0..k {
                            axpy(taps[ky * k + kx], &src[kx * d..kx * d + w], acc);
                        }
                    }
                    narrow(acc, row);
                }
            },
        );
        out
    }

    pub fn grad_input(&self, weight: &[f32], gy: &[f32]) -> Vec<f32> {
        let Depthwise { h, w, k, dilation: d, padding: p, .. } = *self;
        let hw = h * w;
        let (ph, pw) = self.padded_dims();
        let mut gx = vec![0.0f32; self.batch * self.channels * hw];
        gx.par_chunks_mut(hw).enumerate().for_each_init(
            || (Vec::new(), vec![0.0f64; w]),
            |(padded, grow): &mut (Vec<f64>, Vec<f64>), (plane, gp)| {
                let c = plane % self.channels;
                let taps = widen(&weight[c * k * k..][..k * k]);
                padded.clear();
                padded.resize(ph * pw, 0.0);
                for (y, g) in gy[plane * hw..][..hw].chunks_exact(w).enumerate() {
                    for (dst, &v) in grow.iter_mut().zip(g) {
                        *dst = f64::from(v);
                    }
                    for ky in 0..k {
                        let base = (y + ky * d) * pw;
                        for kx in 0..k {
                            let dst = &mut padded[base + kx * d..base + kx * d + w];
                            axpy(taps[ky * k + kx], grow, dst);
                        }
                    }
                }
                for (y, row) in gp.chunks_exact_mut(w).enumerate() {
                    let start = (y + p) * pw + p;
                    narrow(&padded[start..start + w], row);
                }
            },
        );
        gx
    }

    pub fn grad_weight(&self, x: &[f32], gy: &[f32]) -> Vec<f32> {
        let Depthwise { h, w, k, dilation: d, .. } = *self;
        let hw = h * w;
        let (_, pw) = self.padded_dims();
        let mut gw = vec![0.0f32; self.channels * k * k];
        gw.par_chunks_mut(k * k).enumerate().for_each(|(c, gc)| {
            let mut acc = vec![0.0f64; k * k];
            let mut padded = Vec::new();
            for b in 0..self.batch {
                let plane = b * self.channels + c;
                self.pad(&x[plane * hw..][..hw], &mut padded);
                let g = widen(&gy[plane * hw..][..hw]);
                for ky in 0..k {
                    for kx in 0..k {
                        let mut s = 0.0f64;
                        for (y, grow) in g.chunks_exact(w).enumerate() {
                            let start = (y + ky * d) * pw + kx * d;
                            s += dot(grow, &padded[start..start + w]);
                        }
                        acc[ky * k + kx] += s;
                    }
                }
            }
            narrow(&acc, gc);
        });
        gw
    }
}
