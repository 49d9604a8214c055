//! Element-wise arithmetic, reductions and channel slicing.

use super::graph::{Function, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

/// Operand layout for binary ops: same shape, or one side a single element.
#[derive(Clone, Copy, Debug)]
enum Layout {
    Same,
    LhsScalar,
    RhsScalar,
}

struct BinaryFn {
    op: BinaryOp,
    layout: Layout,
}

impl Function for BinaryFn {
    fn name(&self) -> &'static str {
        match self.op {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
        }
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f32]) -> Vec<Option<Vec<f32>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let n = grad.len();
        let at = |x: &[f32], i: usize| if x.len() == 1 { x[0] } else { x[i] };
        let (mut ga, mut gb): (Vec<f32>, Vec<f32>) = match self.op {
            BinaryOp::Add => (grad.to_vec(), grad.to_vec()),
            BinaryOp::Sub => (grad.to_vec(), grad.iter().map(|g| -g).collect()),
            BinaryOp::Mul => (
                (0..n).map(|i| grad[i] * at(b, i)).collect(),
                (0..n).map(|i| grad[i] * at(a, i)).collect(),
            ),
        };
        // A broadcast scalar receives the sum of its per-element contributions.
        let collapse = |g: Vec<f32>| vec![g.iter().map(|&v| f64::from(v)).sum::<f64>() as f32];
        match self.layout {
            Layout::Same => {}
            Layout::LhsScalar => ga = collapse(ga),
            Layout::RhsScalar => gb = collapse(gb),
        }
        vec![Some(ga), Some(gb)]
    }
}

struct AffineFn {
    scale: f32,
}

impl Function for AffineFn {
    fn name(&self) -> &'static str {
        "affine"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &[f32]) -> Vec<Option<Vec<f32>>> {
        vec![Some(grad.iter().map(|g| g * self.scale).collect())]
    }
}

struct SqrtFn;

impl Function for SqrtFn {
    fn name(&self) -> &'static str {
        "sqrt"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grad: &[f32]) -> Vec<Option<Vec<f32>>> {
        let g = grad
            .iter()
            .zip(output.data())
            .map(|(g, y)| if *y > 0.0 { g * 0.5 / y } else { 0.0 })
            .collect();
        vec![Some(g)]
    }
}

struct ReduceFn {
    op: ReduceOp,
    /// Winner of a max reduction.
    argmax: usize,
}

impl Function for ReduceFn {
    fn name(&self) -> &'static str {
        match self.op {
            ReduceOp::Sum => "sum",
            ReduceOp::Mean => "mean",
            ReduceOp::Max => "max",
        }
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f32]) -> Vec<Option<Vec<f32>>> {
        let n = inputs[0].numel();
        let g = grad[0];
        let out = match self.op {
            ReduceOp::Sum => vec![g; n],
            ReduceOp::Mean => vec![(f64::from(g) / n as f64) as f32; n],
            ReduceOp::Max => {
                let mut v = vec![0.0; n];
                v[self.argmax] = g;
                v
            }
        };
        vec![Some(out)]
    }
}

struct ConcatFn {
    /// Channel count of each input, in order.
    channels: Vec<usize>,
}

impl Function for ConcatFn {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grad: &[f32]) -> Vec<Option<Vec<f32>>> {
        let [b, c, h, w] = output.dims4().expect("4-d output");
        let plane = h * w;
        let mut offset = 0;
        let mut result = Vec::with_capacity(self.channels.len());
        for &ci in &self.channels {
            let mut g = Vec::with_capacity(b * ci * plane);
            for bi in 0..b {
                let start = (bi * c + offset) * plane;
                g.extend_from_slice(&grad[start..start + ci * plane]);
            }
            result.push(Some(g));
            offset += ci;
        }
        result
    }
}

struct SliceFn {
    start: usize,
    len: usize,
}

impl Function for SliceFn {
    fn name(&self) -> &'static str {
        "slice_channels"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f32]) -> Vec<Option<Vec<f32>>> {
        let [b, c, h, w] = inputs[0].dims4().expect("4-d input");
        let plane = h * w;
        let mut g = vec![0.0; inputs[0].numel()];
        for bi in 0..b {
            let dst = (bi * c + self.start) * plane;
            let src = bi * self.len * plane;
            g[dst..dst + self.len * plane].copy_from_slice(&grad[src..src + self.len * plane]);
        }
        vec![Some(g)]
    }
}

impl Graph {
    /// Element-wise `add`, `sub` or `mul`. Operands must have equal shapes,
    /// except that either side may be a single-element tensor.
    pub fn apply_binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let layout = if ta.shape() == tb.shape() {
            Layout::Same
        } else if ta.numel() == 1 {
            Layout::LhsScalar
        } else if tb.numel() == 1 {
            Layout::RhsScalar
        } else {
            return Err(Error::shape("apply_binary", ta.shape(), tb.shape()));
        };
        let shape = match layout {
            Layout::LhsScalar => tb.shape().to_vec(),
            _ => ta.shape().to_vec(),
        };
        let n = ta.numel().max(tb.numel());
        let (da, db) = (ta.data(), tb.data());
        let at = |x: &[f32], i: usize| if x.len() == 1 { x[0] } else { x[i] };
        let f: fn(f32, f32) -> f32 = match op {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Mul => |x, y| x * y,
        };
        let data = (0..n).map(|i| f(at(da, i), at(db, i))).collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.record(value, &[a, b], BinaryFn { op, layout }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply_binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply_binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply_binary(BinaryOp::Mul, a, b)
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f32, shift: f32) -> Var {
        let t = self.value(x);
        let value = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|v| scale * v + shift).collect(),
        )
        .expect("same shape");
        self.record(value, &[x], AffineFn { scale })
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.sqrt()).collect())
            .expect("same shape");
        self.record(value, &[x], SqrtFn)
    }

    /// Reduces all elements to a scalar. Reductions accumulate in `f64`.
    /// `Max` routes its gradient to the first maximal element in row-major
    /// order.
    pub fn reduce(&mut self, op: ReduceOp, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(Error::Empty { op: "reduce" });
        }
        let data = t.data();
        let mut argmax = 0;
        let result = match op {
            ReduceOp::Sum => data.iter().map(|&v| f64::from(v)).sum::<f64>(),
            ReduceOp::Mean => data.iter().map(|&v| f64::from(v)).sum::<f64>() / data.len() as f64,
            ReduceOp::Max => {
                for (i, v) in data.iter().enumerate() {
                    if *v > data[argmax] {
                        argmax = i;
                    }
                }
                f64::from(data[argmax])
            }
        };
        let out = self.record(Tensor::scalar(result as f32), &[x], ReduceFn { op, argmax });
        self.set_exact(out, result);
        Ok(out)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceOp::Sum, x)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceOp::Mean, x)
    }

    pub fn max(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceOp::Max, x)
    }

    /// Concatenates `[B, Ci, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty { op: "concat_channels" })?;
        let [b, _, h, w] = self.value(first).dims4()?;
        let mut channels = Vec::with_capacity(parts.len());
        for &p in parts {
            let [pb, pc, ph, pw] = self.value(p).dims4()?;
            if (pb, ph, pw) != (b, h, w) {
                return Err(Error::shape("concat_channels", self.shape(first), self.shape(p)));
            }
            channels.push(pc);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut data = Vec::with_capacity(b * total * plane);
        for bi in 0..b {
            for (&p, &ci) in parts.iter().zip(&channels) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[bi * ci * plane..(bi + 1) * ci * plane]);
            }
        }
        let value = Tensor::new([b, total, h, w], data)?;
        Ok(self.record(value, parts, ConcatFn { channels }))
    }

    /// Channels `start..start + len` of a `[B, C, H, W]` tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [b, c, h, w] = self.value(x).dims4()?;
        if start + len > c || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "channel slice {start}..{} out of range for {c} channels",
                start + len
            )));
        }
        let plane = h * w;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(b * len * plane);
        for bi in 0..b {
            let from = (bi * c + start) * plane;
            data.extend_from_slice(&src[from..from + len * plane]);
        }
        let value = Tensor::new([b, len, h, w], data)?;
        Ok(self.record(value, &[x], SliceFn { start, len }))
    }
}
