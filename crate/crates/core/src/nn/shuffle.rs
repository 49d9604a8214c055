//! Space-to-depth and depth-to-space rearrangements.
//!
//! Unshuffle maps input channel `c` at `(h*r + dy, w*r + dx)` to output
//! channel `c*r*r + dy*r + dx` at `(h, w)`; shuffle is its exact inverse.

use crate::autograd::{Function, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Visits every `(unshuffled index, shuffled index)` pair of a tensor whose
/// spatial form is `[b, c, h*r, w*r]`.
fn for_each_pair(b: usize, c: usize, h: usize, w: usize, r: usize, mut f: impl FnMut(usize, usize)) {
    let (big_h, big_w) = (h * r, w * r);
    for bi in 0..b {
        for ci in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let oc = ci * r * r + dy * r + dx;
                    for y in 0..h {
                        let packed_row = ((bi * c * r * r + oc) * h + y) * w;
                        let spatial_row = ((bi * c + ci) * big_h + y * r + dy) * big_w + dx;
                        for x in 0..w {
                            f(packed_row + x, spatial_row + x * r);
                        }
                    }
                }
            }
        }
    }
}

fn unshuffle_data(data: &[f32], [b, c, h, w]: [usize; 4], r: usize) -> Vec<f32> {
    let mut out = vec![0.0; data.len()];
    for_each_pair(b, c, h / r, w / r, r, |packed, spatial| out[packed] = data[spatial]);
    out
}

/// `[b, c, h, w]` is the shape of the shuffled (spatial) tensor.
fn shuffle_data(data: &[f32], [b, c, h, w]: [usize; 4], r: usize) -> Vec<f32> {
    let mut out = vec![0.0; data.len()];
    for_each_pair(b, c, h / r, w / r, r, |packed, spatial| out[spatial] = data[packed]);
    out
}

fn unshuffle_shape(t: &Tensor, r: usize) -> Result<[usize; 4]> {
    let [b, c, h, w] = t.dims4()?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::invalid_shape(
            t.shape(),
            format!("spatial size not divisible by factor {r}"),
        ));
    }
    Ok([b, c, h, w])
}

fn shuffle_shape(t: &Tensor, r: usize) -> Result<[usize; 4]> {
    let [b, c, h, w] = t.dims4()?;
    if r == 0 || c % (r * r) != 0 {
        return Err(Error::invalid_shape(
            t.shape(),
            format!("channels not divisible by factor {r} squared"),
        ));
    }
    Ok([b, c / (r * r), h * r, w * r])
}

pub fn pixel_unshuffle_tensor(t: &Tensor, r: usize) -> Result<Tensor> {
    let dims @ [b, c, h, w] = unshuffle_shape(t, r)?;
    Tensor::new([b, c * r * r, h / r, w / r], unshuffle_data(t.data(), dims, r))
}

pub fn pixel_shuffle_tensor(t: &Tensor, r: usize) -> Result<Tensor> {
    let dims = shuffle_shape(t, r)?;
    Tensor::new(dims.to_vec(), shuffle_data(t.data(), dims, r))
}

struct UnshuffleFn {
    r: usize,
}

impl Function for UnshuffleFn {
    fn name(&self) -> &'static str {
        "pixel_unshuffle"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f32]) -> Vec<Option<Vec<f32>>> {
        let dims = inputs[0].dims4().expect("4-d");
        vec![Some(shuffle_data(grad, dims, self.r))]
    }
}

struct ShuffleFn {
    r: usize,
}

impl Function for ShuffleFn {
    fn name(&self) -> &'static str {
        "pixel_shuffle"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grad: &[f32]) -> Vec<Option<Vec<f32>>> {
        let dims = output.dims4().expect("4-d");
        vec![Some(unshuffle_data(grad, dims, self.r))]
    }
}

/// `[B, C, H, W] -> [B, C*r*r, H/r, W/r]`.
pub fn pixel_unshuffle(graph: &mut Graph, x: Var, r: usize) -> Result<Var> {
    let value = pixel_unshuffle_tensor(graph.value(x), r)?;
    Ok(graph.record(value, &[x], UnshuffleFn { r }))
}

/// `[B, C*r*r, H, W] -> [B, C, H*r, W*r]`.
pub fn pixel_shuffle(graph: &mut Graph, x: Var, r: usize) -> Result<Var> {
    let value = pixel_shuffle_tensor(graph.value(x), r)?;
    Ok(graph.record(value, &[x], ShuffleFn { r }))
}
