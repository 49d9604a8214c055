use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernels::{Depthwise, Pointwise};
use crate::autograd::{Function, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Geometry of a grouped, dilated 2-D cross-correlation with square kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub groups: usize,
    pub dilation: usize,
    pub padding: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Dense convolution with same-padding and a bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_size,
            groups: 1,
            dilation: 1,
            padding: kernel_size.saturating_sub(1) / 2,
            has_bias: true,
        }
    }

    pub fn depthwise(channels: usize, kernel_size: usize) -> Self {
        Self::new(channels, channels, kernel_size).with_groups(channels)
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 1)
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    /// Sets the dilation and resets padding to keep the output size.
    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self.padding = dilation * self.kernel_size.saturating_sub(1) / 2;
        self
    }

    pub fn with_bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.in_channels == self.out_channels
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel_size == 1 && self.groups == 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel size {} must be odd", self.kernel_size));
        }
        if self.groups == 0 || self.dilation == 0 {
            return bad("groups and dilation must be positive".into());
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return bad(format!(
                "channels {}->{} not divisible by {} groups",
                self.in_channels, self.out_channels, self.groups
            ));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel_size,
            self.kernel_size,
        ]
    }

    /// Inputs feeding one output element.
    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups * self.kernel_size * self.kernel_size
    }

    pub fn num_params(&self) -> usize {
        self.weight_shape().iter().product::<usize>()
            + if self.has_bias { self.out_channels } else { 0 }
    }

    fn output_size(&self, size: usize) -> Result<usize> {
        let span = self.dilation * (self.kernel_size - 1);
        (size + 2 * self.padding)
            .checked_sub(span)
            .filter(|s| *s > 0)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "input extent {size} too small for kernel span {}",
                    span + 1
                ))
            })
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    k: usize,
    dilation: usize,
    padding: usize,
    cin: usize,
    cout: usize,
    in_per_group: usize,
    out_per_group: usize,
}

impl Geometry {
    fn new(x: &Tensor, spec: &ConvSpec) -> Result<Self> {
        spec.validate()?;
        let [batch, cin, h, w] = x.dims4()?;
        if cin != spec.in_channels {
            return Err(Error::shape(
                "conv2d channels",
                &[cin],
                &[spec.in_channels],
            ));
        }
        Ok(Geometry {
            batch,
            h,
            w,
            ho: spec.output_size(h)?,
            wo: spec.output_size(w)?,
            k: spec.kernel_size,
            dilation: spec.dilation,
            padding: spec.padding,
            cin,
            cout: spec.out_channels,
            in_per_group: cin / spec.groups,
            out_per_group: spec.out_channels / spec.groups,
        })
    }

    /// Offset from output to input coordinates for kernel tap `t`.
    fn shift(&self, t: usize) -> isize {
        (t * self.dilation) as isize - self.padding as isize
    }

    /// Output coordinates `o` with `o + shift` inside `[0, extent)`.
    fn valid(shift: isize, extent: usize, out_extent: usize) -> (usize, usize) {
        let lo = (-shift).max(0) as usize;
        let hi = (extent as isize - shift).clamp(0, out_extent as isize) as usize;
        (lo, hi.max(lo))
    }

    /// Calls `f(out_start, in_start, len)` for each contiguous run of
    /// aligned output/input elements touched by tap `(ky, kx)`.
    #[inline]
    fn for_each_run(&self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (dy, dx) = (self.shift(ky), self.shift(kx));
        let (oy0, oy1) = Self::valid(dy, self.h, self.ho);
        let (ox0, ox1) = Self::valid(dx, self.w, self.wo);
        if oy0 >= oy1 || ox0 >= ox1 {
            return;
        }
        let iy0 = (oy0 as isize + dy) as usize;
        let ix0 = (ox0 as isize + dx) as usize;
        if dx == 0 && self.w == self.wo {
            // whole rows line up, so the block is one run
            f(oy0 * self.wo, iy0 * self.w, (oy1 - oy0) * self.wo);
        } else {
            let len = ox1 - ox0;
            for r in 0..oy1 - oy0 {
                f((oy0 + r) * self.wo + ox0, (iy0 + r) * self.w + ix0, len);
            }
        }
    }

    fn weight_index(&self, oc: usize, icl: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_per_group + icl) * self.k + ky) * self.k + kx
    }

    fn same_size(&self) -> bool {
        self.ho == self.h && self.wo == self.w && 2 * self.padding == self.dilation * (self.k - 1)
    }

    fn pointwise(&self) -> Option<Pointwise> {
        (self.k == 1 && self.in_per_group == self.cin && self.same_size()).then_some(Pointwise {
            batch: self.batch,
            cin: self.cin,
            cout: self.cout,
            hw: self.h * self.w,
        })
    }

    fn depthwise(&self) -> Option<Depthwise> {
        (self.in_per_group == 1 && self.out_per_group == 1 && self.same_size()).then_some(Depthwise {
            batch: self.batch,
            channels: self.cin,
            h: self.h,
            w: self.w,
            k: self.k,
            dilation: self.dilation,
            padding: self.padding,
        })
    }
}

fn check_params(spec: &ConvSpec, weight: &Tensor, bias: Option<&Tensor>) -> Result<()> {
    let expected = spec.weight_shape();
    if weight.shape() != expected {
        return Err(Error::shape("conv2d weight", weight.shape(), &expected));
    }
    match (spec.has_bias, bias) {
        (true, Some(b)) if b.shape() != [spec.out_channels] => {
            Err(Error::shape("conv2d bias", b.shape(), &[spec.out_channels]))
        }
        (true, None) => Err(Error::InvalidArgument("conv2d spec expects a bias".into())),
        (false, Some(_)) => Err(Error::InvalidArgument("conv2d spec has no bias".into())),
        _ => Ok(()),
    }
}

/// Forward cross-correlation without graph recording. Sums run in `f64`.
pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let geo = Geometry::new(input, spec)?;
    check_params(spec, weight, bias)?;
    let x = input.data();
    let wt = weight.data();
    let shape = [geo.batch, geo.cout, geo.ho, geo.wo];
    let bias_data = bias.map(Tensor::data);
    if let Some(pw) = geo.pointwise() {
        return Tensor::new(shape, pw.forward(x, wt, bias_data));
    }
    if let Some(dw) = geo.depthwise() {
        return Tensor::new(shape, dw.forward(x, wt, bias_data));
    }
    let (hw, out_hw) = (geo.h * geo.w, geo.ho * geo.wo);
    let mut out = vec![0.0f32; geo.batch * geo.cout * out_hw];

    out.par_chunks_mut(out_hw).enumerate().for_each(|(plane, out_plane)| {
        let (b, oc) = (plane / geo.cout, plane % geo.cout);
        let group = oc / geo.out_per_group;
        let b0 = bias.map_or(0.0, |t| f64::from(t.data()[oc]));
        let mut acc = vec![b0; out_hw];
        for icl in 0..geo.in_per_group {
            let ic = group * geo.in_per_group + icl;
            let src = &x[(b * geo.cin + ic) * hw..][..hw];
            for ky in 0..geo.k {
                for kx in 0..geo.k {
                    let wv = f64::from(wt[geo.weight_index(oc, icl, ky, kx)]);
                    if wv == 0.0 {
                        continue;
                    }
                    geo.for_each_run(ky, kx, |o, i, len| {
                        for (a, &s) in acc[o..o + len].iter_mut().zip(&src[i..i + len]) {
                            *a += wv * f64::from(s);
                        }
                    });
                }
            }
        }
        for (o, a) in out_plane.iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    });
    Tensor::new(shape, out)
}

struct Conv2dFn {
    spec: ConvSpec,
}

impl Conv2dFn {
    fn grad_input(&self, geo: &Geometry, weight: &[f32], gy: &[f32]) -> Vec<f32> {
        if let Some(pw) = geo.pointwise() {
            return pw.grad_input(weight, gy);
        }
        if let Some(dw) = geo.depthwise() {
            return dw.grad_input(weight, gy);
        }
        let (hw, out_hw) = (geo.h * geo.w, geo.ho * geo.wo);
        let mut gx = vec![0.0f32; geo.batch * geo.cin * hw];
        gx.par_chunks_mut(hw).enumerate().for_each(|(plane, gx_plane)| {
            let (b, ic) = (plane / geo.cin, plane % geo.cin);
            let group = ic / geo.in_per_group;
            let icl = ic % geo.in_per_group;
            let mut acc = vec![0.0f64; hw];
            for oc in group * geo.out_per_group..(group + 1) * geo.out_per_group {
                let src = &gy[(b * geo.cout + oc) * out_hw..][..out_hw];
                for ky in 0..geo.k {
                    for kx in 0..geo.k {
                        let wv = f64::from(weight[geo.weight_index(oc, icl, ky, kx)]);
                        if wv == 0.0 {
                            continue;
                        }
                        geo.for_each_run(ky, kx, |o, i, len| {
                            for (a, &s) in acc[i..i + len].iter_mut().zip(&src[o..o + len]) {
                                *a += wv * f64::from(s);
                            }
                        });
                    }
                }
            }
            for (g, a) in gx_plane.iter_mut().zip(&acc) {
                *g = *a as f32;
            }
        });
        gx
    }

    fn grad_weight(&self, geo: &Geometry, x: &[f32], gy: &[f32]) -> Vec<f32> {
        if let Some(pw) = geo.pointwise() {
            return pw.grad_weight(x, gy);
        }
        if let Some(dw) = geo.depthwise() {
            return dw.grad_weight(x, gy);
        }
        let (hw, out_hw) = (geo.h * geo.w, geo.ho * geo.wo);
        let per_oc = geo.in_per_group * geo.k * geo.k;
        let mut gw = vec![0.0f32; geo.cout * per_oc];
        gw.par_chunks_mut(per_oc).enumerate().for_each(|(oc, gw_oc)| {
            let group = oc / geo.out_per_group;
            for icl in 0..geo.in_per_group {
                let ic = group * geo.in_per_group + icl;
                for ky in 0..geo.k {
                    for kx in 0..geo.k {
                        let mut acc = 0.0f64;
                        for b in 0..geo.batch {
                            let g = &gy[(b * geo.cout + oc) * out_hw..][..out_hw];
                            let src = &x[(b * geo.cin + ic) * hw..][..hw];
                            geo.for_each_run(ky, kx, |o, i, len| {
                                acc += g[o..o + len]
                                    .iter()
                                    .zip(&src[i..i + len])
                                    .map(|(&a, &s)| f64::from(a) * f64::from(s))
                                    .sum::<f64>();
                            });
                        }
                        gw_oc[(icl * geo.k + ky) * geo.k + kx] = acc as f32;
                    }
                }
            }
        });
        gw
    }

    fn grad_bias(&self, geo: &Geometry, gy: &[f32]) -> Vec<f32> {
        let out_hw = geo.ho * geo.wo;
        (0..geo.cout)
            .map(|oc| {
                (0..geo.batch)
                    .map(|b| {
                        gy[(b * geo.cout + oc) * out_hw..][..out_hw]
                            .iter()
                            .map(|&v| f64::from(v))
                            .sum::<f64>()
                    })
                    .sum::<f64>() as f32
            })
            .collect()
    }
}

impl Function for Conv2dFn {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f32]) -> Vec<Option<Vec<f32>>> {
        let geo = Geometry::new(inputs[0], &self.spec).expect("validated in forward");
        let mut grads = vec![
            inputs[0]
                .requires_grad()
                .then(|| self.grad_input(&geo, inputs[1].data(), grad)),
            inputs[1]
                .requires_grad()
                .then(|| self.grad_weight(&geo, inputs[0].data(), grad)),
        ];
        if inputs.len() == 3 {
            grads.push(inputs[2].requires_grad().then(|| self.grad_bias(&geo, grad)));
        }
        grads
    }
}

/// Records a convolution of `x: [B, Cin, H, W]` with `weight:
/// [Cout, Cin/groups, k, k]` and optional `bias: [Cout]`.
pub fn conv2d(graph: &mut Graph, x: Var, weight: Var, bias: Option<Var>, spec: &ConvSpec) -> Result<Var> {
    let value = conv2d_forward(
        graph.value(x),
        graph.value(weight),
        bias.map(|b| graph.value(b)),
        spec,
    )?;
    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    Ok(graph.record(value, &inputs, Conv2dFn { spec: *spec }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct seven-loop reference with zero padding.
    fn naive(x: &Tensor, w: &Tensor, b: Option<&Tensor>, s: &ConvSpec) -> Tensor {
        let [n, cin, h, wd] = x.dims4().unwrap();
        let k = s.kernel_size as isize;
        let (d, p) = (s.dilation as isize, s.padding as isize);
        let ipg = cin / s.groups;
        let opg = s.out_channels / s.groups;
        let mut out = Tensor::zeros([n, s.out_channels, h, wd]);
        for bi in 0..n {
            for oc in 0..s.out_channels {
                let g = oc / opg;
                for oy in 0..h as isize {
                    for ox in 0..wd as isize {
                        let mut acc = b.map_or(0.0, |b| f64::from(b.data()[oc]));
                        for icl in 0..ipg {
                            let ic = g * ipg + icl;
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = oy + ky * d - p;
                                    let ix = ox + kx * d - p;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xv = x.data()[((bi * cin + ic) * h + iy as usize) * wd + ix as usize];
                                    let wv = w.data()[((oc * ipg + icl) * k as usize + ky as usize) * k as usize + kx as usize];
                                    acc += f64::from(xv) * f64::from(wv);
                                }
                            }
                        }
                        out.data_mut()[((bi * s.out_channels + oc) * h + oy as usize) * wd + ox as usize] = acc as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn all_ones_counts_overlap() {
        let spec = ConvSpec::new(1, 1, 3).with_bias(false);
        let x = Tensor::ones([1, 1, 3, 3]);
        let w = Tensor::ones([1, 1, 3, 3]);
        let y = conv2d_forward(&x, &w, None, &spec).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec::new(1, 1, 5).with_bias(false);
        let x = Tensor::uniform([2, 1, 6, 7], -1.0, 1.0, &mut rng);
        let mut w = Tensor::zeros([1, 1, 5, 5]);
        w.data_mut()[12] = 1.0;
        let y = conv2d_forward(&x, &w, None, &spec).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn depthwise_scales_per_channel() {
        let spec = ConvSpec::depthwise(2, 3).with_bias(false);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::uniform([1, 2, 4, 4], -1.0, 1.0, &mut rng);
        let mut w = Tensor::zeros([2, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        w.data_mut()[9 + 4] = 2.0;
        let y = conv2d_forward(&x, &w, None, &spec).unwrap();
        assert_eq!(y.data()[..16], x.data()[..16]);
        for i in 16..32 {
            assert_eq!(y.data()[i], 2.0 * x.data()[i]);
        }
        assert_eq!(naive(&x, &w, None, &spec), y);
    }

    #[test]
    fn matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(cin, cout, k, groups, dilation) in &[
            (4, 6, 3, 1, 1),
            (4, 4, 5, 4, 2),
            (6, 4, 3, 2, 3),
            (3, 5, 1, 1, 1),
            (4, 4, 7, 4, 1),
        ] {
            let spec = ConvSpec::new(cin, cout, k).with_groups(groups).with_dilation(dilation);
            let x = Tensor::uniform([2, cin, 9, 7], -1.0, 1.0, &mut rng);
            let w = Tensor::uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
            let b = Tensor::uniform([cout], -1.0, 1.0, &mut rng);
            let fast = conv2d_forward(&x, &w, Some(&b), &spec).unwrap();
            let slow = naive(&x, &w, Some(&b), &spec);
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-5);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let x = Tensor::zeros([1, 4, 5, 5]);
        let even = ConvSpec::new(4, 4, 2);
        assert!(conv2d_forward(&x, &Tensor::zeros(even.weight_shape()), Some(&Tensor::zeros([4])), &even).is_err());
        let groups = ConvSpec::new(4, 6, 3).with_groups(4);
        assert!(groups.validate().is_err());
        let wrong_in = ConvSpec::new(3, 4, 3);
        assert!(conv2d_forward(&x, &Tensor::zeros(wrong_in.weight_shape()), Some(&Tensor::zeros([4])), &wrong_in).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = ConvSpec::new(4, 4, 3).with_groups(2).with_dilation(2);
        let x = Tensor::uniform([2, 4, 5, 6], -2.0, 2.0, &mut rng);
        let w = Tensor::uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
        let b = Tensor::uniform([4], -1.0, 1.0, &mut rng);
        // sum of squares keeps the gradient input-dependent
        let loss = |g: &mut Graph, y: Var| {
            let sq = g.mul(y, y)?;
            g.mean(sq)
        };
        let (wc, bc) = (w.clone(), b.clone());
        let err_x = grad_check(
            |g, v| {
                let w = g.constant(wc.clone());
                let b = g.constant(bc.clone());
                let y = conv2d(g, v, w, Some(b), &spec)?;
                loss(g, y)
            },
            &x,
            1e-3,
        )
        .unwrap();
        let xc = x.clone();
        let err_w = grad_check(
            |g, v| {
                let x = g.constant(xc.clone());
                let b = g.constant(bc.clone());
                let y = conv2d(g, x, v, Some(b), &spec)?;
                loss(g, y)
            },
            &w,
            1e-3,
        )
        .unwrap();
        let err_b = grad_check(
            |g, v| {
                let x = g.constant(xc.clone());
                let w = g.constant(w.clone());
                let y = conv2d(g, x, w, Some(v), &spec)?;
                loss(g, y)
            },
            &b,
            1e-3,
        )
        .unwrap();
        assert!(err_x < 1e-3 && err_w < 1e-3 && err_b < 1e-3, "{err_x} {err_w} {err_b}");
    }

    #[test]
    fn specialized_paths_have_correct_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for spec in [ConvSpec::depthwise(3, 5).with_dilation(2), ConvSpec::pointwise(3, 4)] {
            let x = Tensor::uniform([2, 3, 6, 5], -2.0, 2.0, &mut rng);
            let w = Tensor::uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
            let b = Tensor::uniform([spec.out_channels], -1.0, 1.0, &mut rng);
            let fast = conv2d_forward(&x, &w, Some(&b), &spec).unwrap();
            assert!(fast.max_abs_diff(&naive(&x, &w, Some(&b), &spec)).unwrap() < 1e-5);
            let (wc, bc, xc) = (w.clone(), b.clone(), x.clone());
            let err_x = grad_check(
                |g, v| {
                    let (w, b) = (g.constant(wc.clone()), g.constant(bc.clone()));
                    let y = conv2d(g, v, w, Some(b), &spec)?;
                    let sq = g.mul(y, y)?;
                    g.mean(sq)
                },
                &x,
                1e-3,
            )
            .unwrap();
            let err_w = grad_check(
                |g, v| {
                    let (x, b) = (g.constant(xc.clone()), g.constant(bc.clone()));
                    let y = conv2d(g, x, v, Some(b), &spec)?;
                    let sq = g.mul(y, y)?;
                    g.mean(sq)
                },
                &w,
                1e-3,
            )
            .unwrap();
            assert!(err_x < 1e-3 && err_w < 1e-3, "{err_x} {err_w}");
        }
    }
}
