//! Tape-based reverse-mode differentiation over the layers the model needs.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is
//! a valid topological order. Each op keeps exactly what its backward pass
//! needs (im2col buffers, argmax indices, LSTM gate activations); nothing is
//! cached when the graph is built for inference only.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::Scalar;

pub type Var = usize;

/// 3-D convolution with a shared spatial kernel (`k_s x k_s`) and a temporal kernel `k_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv3dSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub k_s: usize,
    pub k_t: usize,
    pub s_s: usize,
    pub s_t: usize,
    pub p_s: usize,
    pub p_t: usize,
}

impl Conv3dSpec {
    /// `(T', H', W')` for an input of `(T, H, W)`, if non-empty.
    pub fn output_dims(&self, t: usize, h: usize, w: usize) -> Option<(usize, usize, usize)> {
        let dim = |d: usize, k: usize, s: usize, p: usize| {
            let padded = d + 2 * p;
            (padded >= k && s > 0).then(|| (padded - k) / s + 1)
        };
        Some((
            dim(t, self.k_t, self.s_t, self.p_t)?,
            dim(h, self.k_s, self.s_s, self.p_s)?,
            dim(w, self.k_s, self.s_s, self.p_s)?,
        ))
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        [self.c_out, self.c_in, self.k_t, self.k_s, self.k_s]
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k_t * self.k_s * self.k_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub k_s: usize,
    pub k_t: usize,
    pub s_s: usize,
    pub s_t: usize,
}

impl PoolSpec {
    pub fn output_dims(&self, t: usize, h: usize, w: usize) -> Option<(usize, usize, usize)> {
        let dim = |d: usize, k: usize, s: usize| (d >= k && s > 0).then(|| (d - k) / s + 1);
        Some((dim(t, self.k_t, self.s_t)?, dim(h, self.k_s, self.s_s)?, dim(w, self.k_s, self.s_s)?))
    }
}

#[derive(Debug, Clone)]
struct LstmCache<T> {
    /// Post-activation gates `i, f, g, o` per step, `T x 4H`.
    gates: Vec<T>,
    cell: Vec<T>,
    tanh_cell: Vec<T>,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param(usize),
    Conv3d {
        input: Var,
        weight: Var,
        bias: Var,
        spec: Conv3dSpec,
        cols: Vec<T>,
    },
    MaxPool3d {
        input: Var,
        argmax: Vec<usize>,
    },
    Relu {
        input: Var,
    },
    SpatialMean {
        input: Var,
    },
    Lstm {
        input: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        reverse: bool,
        cache: LstmCache<T>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    Attention {
        input: Var,
        query: Var,
        weights: Vec<T>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<T>,
    },
    Scale {
        input: Var,
        factor: T,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Computation tape. Build with `record = true` to allow `backward`.
#[derive(Debug, Clone)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    record: bool,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}

/// Output positions `o` in `0..out` whose input index `o * stride + k - pad` lies in `0..len`.
fn valid_range(out: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // smallest o with o * stride + k >= pad
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // largest o with o * stride + k - pad <= len - 1
    let hi = if len + pad > k { ((len + pad - k - 1) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Walks every (patch row, output row) pair, handing the closure the column
/// buffer offset, input offset, valid output-x range and the x stride.
fn for_each_patch_row(dims: [usize; 4], spec: &Conv3dSpec, out: (usize, usize, usize), mut f: impl FnMut(usize, usize, (usize, usize))) {
    let [c, t, h, w] = dims;
    let (ot, oh, ow) = out;
    let n = ot * oh * ow;
    let mut r = 0;
    for ci in 0..c {
        for kt in 0..spec.k_t {
            let (z_lo, z_hi) = valid_range(ot, t, kt, spec.s_t, spec.p_t);
            for ky in 0..spec.k_s {
                let (y_lo, y_hi) = valid_range(oh, h, ky, spec.s_s, spec.p_s);
                for kx in 0..spec.k_s {
                    let (x_lo, x_hi) = valid_range(ow, w, kx, spec.s_s, spec.p_s);
                    for oz in z_lo..z_hi {
                        let iz = oz * spec.s_t + kt - spec.p_t;
                        for oy in y_lo..y_hi {
                            let iy = oy * spec.s_s + ky - spec.p_s;
                            let col = r * n + (oz * oh + oy) * ow;
                            // input offset of output x = 0 (may be virtual when x_lo > 0)
                            let src = ((ci * t + iz) * h + iy) * w + kx;
                            f(col, src, (x_lo, x_hi));
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

pub(crate) fn im2col<T: Scalar>(x: &[T], dims: [usize; 4], spec: &Conv3dSpec, out: (usize, usize, usize)) -> Vec<T> {
    let n = out.0 * out.1 * out.2;
    let mut cols = vec![T::zero(); spec.patch_len() * n];
    let (s, p) = (spec.s_s, spec.p_s);
    for_each_patch_row(dims, spec, out, |col, src, (lo, hi)| {
        if lo >= hi {
            return;
        }
        let first = src + lo * s - p;
        let dst = &mut cols[col + lo..col + hi];
        if s == 1 {
            dst.copy_from_slice(&x[first..first + (hi - lo)]);
        } else {
            for (d, v) in dst.iter_mut().zip(x[first..].iter().step_by(s)) {
                *d = *v;
            }
        }
    });
    cols
}

fn col2im<T: Scalar>(cols: &[T], dims: [usize; 4], spec: &Conv3dSpec, out: (usize, usize, usize), dx: &mut [T]) {
    let (s, p) = (spec.s_s, spec.p_s);
    for_each_patch_row(dims, spec, out, |col, src, (lo, hi)| {
        if lo >= hi {
            return;
        }
        let first = src + lo * s - p;
        let from = &cols[col + lo..col + hi];
        for (d, v) in dx[first..].iter_mut().step_by(s).zip(from) {
            *d += *v;
        }
    });
}

impl<T: Scalar> Graph<T> {
    pub fn new(record: bool) -> Self {
        Graph { nodes: Vec::new(), record }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v].value
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v)?.value.grad.as_deref()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = self.record && inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        self.nodes.len() - 1
    }

    /// Constant input (no gradient is propagated into it).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Input,
            needs_grad: false,
        });
        self.nodes.len() - 1
    }

    /// Trainable leaf tied to parameter slot `slot`.
    pub fn param(&mut self, slot: usize, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Param(slot),
            needs_grad: self.record,
        });
        self.nodes.len() - 1
    }

    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Var, spec: Conv3dSpec) -> Result<Var> {
        let x = &self.nodes[input].value;
        let [c, t, h, w] = match x.shape[..] {
            [c, t, h, w] => [c, t, h, w],
            _ => return Err(shape_err(format!("conv3d input must be C x T x H x W, got {:?}", x.shape))),
        };
        if c != spec.c_in {
            return Err(shape_err(format!("conv3d expects {} input channels, got {c}", spec.c_in)));
        }
        if self.nodes[weight].value.shape != spec.weight_shape() || self.nodes[bias].value.shape != [spec.c_out] {
            return Err(shape_err("conv3d weight or bias shape does not match its spec"));
        }
        let out = spec
            .output_dims(t, h, w)
            .ok_or_else(|| shape_err(format!("conv3d kernel larger than input {:?}", x.shape)))?;
        let n = out.0 * out.1 * out.2;
        let k = spec.patch_len();
        let cols = im2col(&x.data, [c, t, h, w], &spec, out);
        let wt = &self.nodes[weight].value.data;
        let b = &self.nodes[bias].value.data;
        let mut y = vec![T::zero(); spec.c_out * n];
        for (co, row) in y.chunks_mut(n).enumerate() {
            row.iter_mut().for_each(|v| *v = b[co]);
        }
        T::gemm(spec.c_out, k, n, T::one(), wt, (k as isize, 1), &cols, (n as isize, 1), T::one(), &mut y, (n as isize, 1));
        let value = Tensor::new(vec![spec.c_out, out.0, out.1, out.2], y)?;
        let cols = if self.record { cols } else { Vec::new() };
        Ok(self.push(
            value,
            Op::Conv3d {
                input,
                weight,
                bias,
                spec,
                cols,
            },
            &[input, weight, bias],
        ))
    }

    pub fn maxpool3d(&mut self, input: Var, spec: PoolSpec) -> Result<Var> {
        let x = &self.nodes[input].value;
        let [c, t, h, w] = match x.shape[..] {
            [c, t, h, w] => [c, t, h, w],
            _ => return Err(shape_err(format!("maxpool3d input must be C x T x H x W, got {:?}", x.shape))),
        };
        let (ot, oh, ow) = spec
            .output_dims(t, h, w)
            .ok_or_else(|| shape_err(format!("pool window larger than input {:?}", x.shape)))?;
        let mut y = Vec::with_capacity(c * ot * oh * ow);
        let mut argmax = Vec::with_capacity(c * ot * oh * ow);
        for ci in 0..c {
            for oz in 0..ot {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = usize::MAX;
                        for kz in 0..spec.k_t {
                            for ky in 0..spec.k_s {
                                for kx in 0..spec.k_s {
                                    let idx = ((ci * t + oz * spec.s_t + kz) * h + oy * spec.s_s + ky) * w + ox * spec.s_s + kx;
                                    if best == usize::MAX || x.data[idx] > x.data[best] {
                                        best = idx;
                                    }
                                }
                            }
                        }
                        y.push(x.data[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        let value = Tensor::new(vec![c, ot, oh, ow], y)?;
        Ok(self.push(value, Op::MaxPool3d { input, argmax }, &[input]))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = &self.nodes[input].value;
        let data = x.data.iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor {
            shape: x.shape.clone(),
            data,
            grad: None,
        };
        self.push(value, Op::Relu { input }, &[input])
    }

    /// `C x T x H x W` to a `T x C` sequence by averaging over space.
    pub fn spatial_mean(&mut self, input: Var) -> Result<Var> {
        let x = &self.nodes[input].value;
        let [c, t, h, w] = match x.shape[..] {
            [c, t, h, w] => [c, t, h, w],
            _ => return Err(shape_err("spatial mean expects C x T x H x W")),
        };
        let hw = h * w;
        let inv = T::one() / T::lit(hw as f64);
        let mut y = vec![T::zero(); t * c];
        for ci in 0..c {
            for ti in 0..t {
                let s: T = x.data[(ci * t + ti) * hw..(ci * t + ti + 1) * hw].iter().copied().sum();
                y[ti * c + ci] = s * inv;
            }
        }
        let value = Tensor::new(vec![t, c], y)?;
        Ok(self.push(value, Op::SpatialMean { input }, &[input]))
    }

    /// One direction of an LSTM layer over a `T x I` sequence (gate order i, f, g, o).
    pub fn lstm(&mut self, input: Var, w_ih: Var, w_hh: Var, bias: Var, reverse: bool) -> Result<Var> {
        let x = &self.nodes[input].value;
        let [t, i_dim] = match x.shape[..] {
            [t, i] => [t, i],
            _ => return Err(shape_err("lstm input must be T x I")),
        };
        let wi = &self.nodes[w_ih].value;
        let wh = &self.nodes[w_hh].value;
        let b = &self.nodes[bias].value;
        let h_dim = wh.shape.get(1).copied().unwrap_or(0);
        let g4 = 4 * h_dim;
        if wi.shape != [g4, i_dim] || wh.shape != [g4, h_dim] || b.shape != [g4] || h_dim == 0 {
            return Err(shape_err(format!(
                "lstm weights {:?} / {:?} / {:?} do not fit input width {i_dim}",
                wi.shape, wh.shape, b.shape
            )));
        }
        let mut zx = vec![T::zero(); t * g4];
        T::gemm(t, i_dim, g4, T::one(), &x.data, (i_dim as isize, 1), &wi.data, (1, i_dim as isize), T::zero(), &mut zx, (g4 as isize, 1));
        let mut gates = vec![T::zero(); t * g4];
        let mut cell = vec![T::zero(); t * h_dim];
        let mut tanh_cell = vec![T::zero(); t * h_dim];
        let mut out = vec![T::zero(); t * h_dim];
        let mut h_prev = vec![T::zero(); h_dim];
        let mut c_prev = vec![T::zero(); h_dim];
        let steps: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
        let mut z = vec![T::zero(); g4];
        for &s in &steps {
            for (r, zr) in z.iter_mut().enumerate() {
                let whr = &wh.data[r * h_dim..(r + 1) * h_dim];
                *zr = zx[s * g4 + r] + b.data[r] + whr.iter().zip(&h_prev).map(|(&a, &hv)| a * hv).sum::<T>();
            }
            let gs = &mut gates[s * g4..(s + 1) * g4];
            for j in 0..h_dim {
                let ig = sigmoid(z[j]);
                let fg = sigmoid(z[h_dim + j]);
                let gg = z[2 * h_dim + j].tanh();
                let og = sigmoid(z[3 * h_dim + j]);
                gs[j] = ig;
                gs[h_dim + j] = fg;
                gs[2 * h_dim + j] = gg;
                gs[3 * h_dim + j] = og;
                let cv = fg * c_prev[j] + ig * gg;
                let tc = cv.tanh();
                cell[s * h_dim + j] = cv;
                tanh_cell[s * h_dim + j] = tc;
                out[s * h_dim + j] = og * tc;
            }
            h_prev.copy_from_slice(&out[s * h_dim..(s + 1) * h_dim]);
            c_prev.copy_from_slice(&cell[s * h_dim..(s + 1) * h_dim]);
        }
        let cache = if self.record {
            LstmCache { gates, cell, tanh_cell }
        } else {
            LstmCache {
                gates: Vec::new(),
                cell: Vec::new(),
                tanh_cell: Vec::new(),
            }
        };
        let value = Tensor::new(vec![t, h_dim], out)?;
        Ok(self.push(
            value,
            Op::Lstm {
                input,
                w_ih,
                w_hh,
                bias,
                reverse,
                cache,
            },
            &[input, w_ih, w_hh, bias],
        ))
    }

    /// Concatenates two `T x F` sequences along features.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.rank() != 2 || vb.rank() != 2 || va.shape[0] != vb.shape[0] {
            return Err(shape_err(format!("cannot concat {:?} and {:?}", va.shape, vb.shape)));
        }
        let (t, fa, fb) = (va.shape[0], va.shape[1], vb.shape[1]);
        let mut data = Vec::with_capacity(t * (fa + fb));
        for s in 0..t {
            data.extend_from_slice(&va.data[s * fa..(s + 1) * fa]);
            data.extend_from_slice(&vb.data[s * fb..(s + 1) * fb]);
        }
        let value = Tensor::new(vec![t, fa + fb], data)?;
        Ok(self.push(value, Op::Concat { a, b }, &[a, b]))
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - p)`.
    pub fn dropout(&mut self, input: Var, p: f64, rng: &mut Rng) -> Var {
        let x = &self.nodes[input].value;
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = x.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor {
            shape: x.shape.clone(),
            data,
            grad: None,
        };
        self.push(value, Op::Dropout { input, mask }, &[input])
    }

    /// Softmax-weighted sum over time of a `T x F` sequence, scored by a learned query.
    pub fn attention(&mut self, input: Var, query: Var) -> Result<Var> {
        let (x, q) = (&self.nodes[input].value, &self.nodes[query].value);
        if x.rank() != 2 || q.shape != [x.shape[1]] || x.shape[0] == 0 {
            return Err(shape_err(format!("attention over {:?} with query {:?}", x.shape, q.shape)));
        }
        let (t, f) = (x.shape[0], x.shape[1]);
        let scores: Vec<T> = (0..t)
            .map(|s| x.data[s * f..(s + 1) * f].iter().zip(&q.data).map(|(&a, &b)| a * b).sum())
            .collect();
        let weights = softmax(&scores);
        let mut out = vec![T::zero(); f];
        for s in 0..t {
            for j in 0..f {
                out[j] += weights[s] * x.data[s * f + j];
            }
        }
        let value = Tensor::new(vec![f], out)?;
        Ok(self.push(value, Op::Attention { input, query, weights }, &[input, query]))
    }

    /// Attention weights computed by the node `v`, if it is an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<&[T]> {
        match &self.nodes.get(v)?.op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// `y = x W^T + b` for `x` of shape `F` or `N x F`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (&self.nodes[input].value, &self.nodes[weight].value, &self.nodes[bias].value);
        let f = *x.shape.last().ok_or_else(|| shape_err("linear input is a scalar"))?;
        let rows = x.len() / f.max(1);
        if w.rank() != 2 || w.shape[1] != f || b.shape != [w.shape[0]] || x.rank() > 2 {
            return Err(shape_err(format!("linear {:?} x {:?} + {:?}", x.shape, w.shape, b.shape)));
        }
        let o = w.shape[0];
        let mut y: Vec<T> = (0..rows).flat_map(|_| b.data.iter().copied()).collect();
        T::gemm(rows, f, o, T::one(), &x.data, (f as isize, 1), &w.data, (1, f as isize), T::one(), &mut y, (o as isize, 1));
        let shape = if x.rank() == 1 { vec![o] } else { vec![rows, o] };
        let value = Tensor::new(shape, y)?;
        Ok(self.push(value, Op::Linear { input, weight, bias }, &[input, weight, bias]))
    }

    /// Cross-entropy of softmax(logits) against `target`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let z = &self.nodes[logits].value;
        if z.rank() != 1 || target >= z.len() {
            return Err(shape_err(format!("cross-entropy target {target} for logits {:?}", z.shape)));
        }
        let probs = softmax(&z.data);
        let m = z.data.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + z.data.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        let loss = lse - z.data[target];
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCrossEntropy { logits, target, probs }, &[logits]))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let x = &self.nodes[input].value;
        let value = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| v * factor).collect(),
            grad: None,
        };
        self.push(value, Op::Scale { input, factor }, &[input])
    }

    /// Reverse pass from the scalar `loss`; fills every node's gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.record || loss >= self.nodes.len() || self.nodes[loss].value.len() != 1 {
            return Err(Error::GraphNotBuilt);
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[loss] = Some(vec![T::one()]);
        for v in (0..=loss).rev() {
            if !self.nodes[v].needs_grad {
                continue;
            }
            let Some(gy) = grads[v].take() else { continue };
            self.backward_node(v, &gy, &mut grads)?;
            grads[v] = Some(gy);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.value.grad = g;
        }
        Ok(())
    }

    /// Parameter gradients by slot (zeros for slots not reached).
    pub fn param_grads(&self, sizes: &[usize]) -> Vec<Vec<T>> {
        let mut out: Vec<Vec<T>> = sizes.iter().map(|&s| vec![T::zero(); s]).collect();
        for node in &self.nodes {
            if let (Op::Param(slot), Some(g)) = (&node.op, &node.value.grad) {
                for (o, &v) in out[*slot].iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
        out
    }

    fn backward_node(&self, v: Var, gy: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let needs = |i: Var| self.nodes[i].needs_grad;
        macro_rules! grad_of {
            ($i:expr) => {
                accumulator(grads, $i, self.nodes[$i].value.len())
            };
        }
        match &self.nodes[v].op {
            Op::Input | Op::Param(_) => {}
            Op::Conv3d {
                input,
                weight,
                bias,
                spec,
                cols,
            } => {
                let x = &self.nodes[*input].value;
                let dims = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]];
                let y = &self.nodes[v].value;
                let out = (y.shape[1], y.shape[2], y.shape[3]);
                let n = out.0 * out.1 * out.2;
                let k = spec.patch_len();
                if needs(*bias) {
                    let db = grad_of!(*bias);
                    for (co, row) in gy.chunks(n).enumerate() {
                        db[co] += row.iter().copied().sum::<T>();
                    }
                }
                if needs(*weight) {
                    let dw = grad_of!(*weight);
                    T::gemm(spec.c_out, n, k, T::one(), gy, (n as isize, 1), cols, (1, n as isize), T::one(), dw, (k as isize, 1));
                }
                if needs(*input) {
                    let w = &self.nodes[*weight].value.data;
                    let mut dcols = vec![T::zero(); k * n];
                    T::gemm(k, spec.c_out, n, T::one(), w, (1, k as isize), gy, (n as isize, 1), T::zero(), &mut dcols, (n as isize, 1));
                    let dx = grad_of!(*input);
                    col2im(&dcols, dims, spec, out, dx);
                }
            }
            Op::MaxPool3d { input, argmax } => {
                if needs(*input) {
                    let dx = grad_of!(*input);
                    for (&i, &g) in argmax.iter().zip(gy) {
                        dx[i] += g;
                    }
                }
            }
            Op::Relu { input } => {
                if needs(*input) {
                    let x = &self.nodes[*input].value.data;
                    let dx = grad_of!(*input);
                    for ((d, &xv), &g) in dx.iter_mut().zip(x).zip(gy) {
                        if xv > T::zero() {
                            *d += g;
                        }
                    }
                }
            }
            Op::SpatialMean { input } => {
                if needs(*input) {
                    let s = &self.nodes[*input].value.shape;
                    let (c, t, hw) = (s[0], s[1], s[2] * s[3]);
                    let inv = T::one() / T::lit(hw as f64);
                    let dx = grad_of!(*input);
                    for ci in 0..c {
                        for ti in 0..t {
                            let g = gy[ti * c + ci] * inv;
                            dx[(ci * t + ti) * hw..(ci * t + ti + 1) * hw].iter_mut().for_each(|d| *d += g);
                        }
                    }
                }
            }
            Op::Lstm {
                input,
                w_ih,
                w_hh,
                bias,
                reverse,
                cache,
            } => self.lstm_backward(v, gy, grads, (*input, *w_ih, *w_hh, *bias), *reverse, cache),
            Op::Concat { a, b } => {
                let fa = self.nodes[*a].value.shape[1];
                let fb = self.nodes[*b].value.shape[1];
                let t = self.nodes[*a].value.shape[0];
                if needs(*a) {
                    let da = grad_of!(*a);
                    for s in 0..t {
                        for j in 0..fa {
                            da[s * fa + j] += gy[s * (fa + fb) + j];
                        }
                    }
                }
                if needs(*b) {
                    let db = grad_of!(*b);
                    for s in 0..t {
                        for j in 0..fb {
                            db[s * fb + j] += gy[s * (fa + fb) + fa + j];
                        }
                    }
                }
            }
            Op::Dropout { input, mask } => {
                if needs(*input) {
                    let dx = grad_of!(*input);
                    for ((d, &m), &g) in dx.iter_mut().zip(mask).zip(gy) {
                        *d += m * g;
                    }
                }
            }
            Op::Attention { input, query, weights } => {
                let x = &self.nodes[*input].value;
                let q = &self.nodes[*query].value.data;
                let (t, f) = (x.shape[0], x.shape[1]);
                let dalpha: Vec<T> = (0..t)
                    .map(|s| x.data[s * f..(s + 1) * f].iter().zip(gy).map(|(&a, &b)| a * b).sum())
                    .collect();
                let mean: T = weights.iter().zip(&dalpha).map(|(&a, &d)| a * d).sum();
                let ds: Vec<T> = weights.iter().zip(&dalpha).map(|(&a, &d)| a * (d - mean)).collect();
                if needs(*input) {
                    let dx = grad_of!(*input);
                    for s in 0..t {
                        for j in 0..f {
                            dx[s * f + j] += weights[s] * gy[j] + ds[s] * q[j];
                        }
                    }
                }
                if needs(*query) {
                    let dq = grad_of!(*query);
                    for s in 0..t {
                        for j in 0..f {
                            dq[j] += ds[s] * x.data[s * f + j];
                        }
                    }
                }
            }
            Op::Linear { input, weight, bias } => {
                let x = &self.nodes[*input].value;
                let w = &self.nodes[*weight].value;
                let (o, f) = (w.shape[0], w.shape[1]);
                let rows = x.len() / f;
                if needs(*bias) {
                    let db = grad_of!(*bias);
                    for r in 0..rows {
                        for j in 0..o {
                            db[j] += gy[r * o + j];
                        }
                    }
                }
                if needs(*weight) {
                    let dw = grad_of!(*weight);
                    T::gemm(o, rows, f, T::one(), gy, (1, o as isize), &x.data, (f as isize, 1), T::one(), dw, (f as isize, 1));
                }
                if needs(*input) {
                    let dx = grad_of!(*input);
                    T::gemm(rows, o, f, T::one(), gy, (o as isize, 1), &w.data, (f as isize, 1), T::one(), dx, (f as isize, 1));
                }
            }
            Op::SoftmaxCrossEntropy { logits, target, probs } => {
                if needs(*logits) {
                    let dz = grad_of!(*logits);
                    for (j, (d, &p)) in dz.iter_mut().zip(probs).enumerate() {
                        let y = if j == *target { T::one() } else { T::zero() };
                        *d += gy[0] * (p - y);
                    }
                }
            }
            Op::Scale { input, factor } => {
                if needs(*input) {
                    let dx = grad_of!(*input);
                    for (d, &g) in dx.iter_mut().zip(gy) {
                        *d += g * *factor;
                    }
                }
            }
        }
        Ok(())
    }

    fn lstm_backward(
        &self,
        v: Var,
        gy: &[T],
        grads: &mut [Option<Vec<T>>],
        vars: (Var, Var, Var, Var),
        reverse: bool,
        cache: &LstmCache<T>,
    ) {
        let (input, w_ih, w_hh, bias) = vars;
        let x = &self.nodes[input].value;
        let wi = &self.nodes[w_ih].value.data;
        let wh = &self.nodes[w_hh].value.data;
        let h_out = &self.nodes[v].value.data;
        let (t, i_dim) = (x.shape[0], x.shape[1]);
        let h_dim = self.nodes[v].value.shape[1];
        let g4 = 4 * h_dim;
        let steps: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
        let mut dz_all = vec![T::zero(); t * g4];
        let mut dwh = vec![T::zero(); g4 * h_dim];
        let mut db = vec![T::zero(); g4];
        let mut dh_next = vec![T::zero(); h_dim];
        let mut dc_next = vec![T::zero(); h_dim];
        let one = T::one();
        for (k, &s) in steps.iter().enumerate().rev() {
            let prev = (k > 0).then(|| steps[k - 1]);
            let gs = &cache.gates[s * g4..(s + 1) * g4];
            let dz = &mut dz_all[s * g4..(s + 1) * g4];
            for j in 0..h_dim {
                let (ig, fg, gg, og) = (gs[j], gs[h_dim + j], gs[2 * h_dim + j], gs[3 * h_dim + j]);
                let tc = cache.tanh_cell[s * h_dim + j];
                let c_prev = prev.map_or(T::zero(), |p| cache.cell[p * h_dim + j]);
                let dh = gy[s * h_dim + j] + dh_next[j];
                let d_o = dh * tc;
                let dc = dh * og * (one - tc * tc) + dc_next[j];
                dz[j] = dc * gg * ig * (one - ig);
                dz[h_dim + j] = dc * c_prev * fg * (one - fg);
                dz[2 * h_dim + j] = dc * ig * (one - gg * gg);
                dz[3 * h_dim + j] = d_o * og * (one - og);
                dc_next[j] = dc * fg;
            }
            for (r, &d) in dz.iter().enumerate() {
                db[r] += d;
                if let Some(p) = prev {
                    let hp = &h_out[p * h_dim..(p + 1) * h_dim];
                    for (w, &hv) in dwh[r * h_dim..(r + 1) * h_dim].iter_mut().zip(hp) {
                        *w += d * hv;
                    }
                }
            }
            for (j, dn) in dh_next.iter_mut().enumerate() {
                *dn = (0..g4).map(|r| wh[r * h_dim + j] * dz[r]).sum();
            }
        }
        let needs = |i: Var| self.nodes[i].needs_grad;
        let mut add = |i: Var, src: &[T]| {
            let slot = grads[i].get_or_insert_with(|| vec![T::zero(); src.len()]);
            for (d, &s) in slot.iter_mut().zip(src) {
                *d += s;
            }
        };
        if needs(bias) {
            add(bias, &db);
        }
        if needs(w_hh) {
            add(w_hh, &dwh);
        }
        if needs(w_ih) {
            let mut dwi = vec![T::zero(); g4 * i_dim];
            T::gemm(g4, t, i_dim, one, &dz_all, (1, g4 as isize), &x.data, (i_dim as isize, 1), T::zero(), &mut dwi, (i_dim as isize, 1));
            add(w_ih, &dwi);
        }
        if needs(input) {
            let mut dx = vec![T::zero(); t * i_dim];
            T::gemm(t, g4, i_dim, one, &dz_all, (g4 as isize, 1), wi, (i_dim as isize, 1), T::zero(), &mut dx, (i_dim as isize, 1));
            add(input, &dx);
        }
    }
}

fn accumulator<T: Scalar>(grads: &mut [Option<Vec<T>>], i: Var, len: usize) -> &mut Vec<T> {
    grads[i].get_or_insert_with(|| vec![T::zero(); len])
}

pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}
