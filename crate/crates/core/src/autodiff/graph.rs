//! Recorded computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in execution order, so the vector index order is
//! already topological and the backward pass is a single reverse sweep.
//! Convolutions are causal along the time axis: padding is applied to past
//! frames only, so no output frame ever reads a future input frame.

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub type VarId = usize;

/// Backward rule: `(all node values, all node shapes, grad of this node, grads) -> ()`.
type BackFn<T> = Box<dyn Fn(&[Vec<T>], &[Vec<usize>], &[T], &mut [Vec<T>])>;

pub struct Graph<T: Real> {
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<T>>,
    requires: Vec<bool>,
    backs: Vec<Option<BackFn<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { shapes: Vec::new(), values: Vec::new(), requires: Vec::new(), backs: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn shape(&self, id: VarId) -> &[usize] {
        &self.shapes[id]
    }

    pub fn value(&self, id: VarId) -> &[T] {
        &self.values[id]
    }

    pub fn value_tensor(&self, id: VarId) -> Tensor<T> {
        Tensor::from_vec(&self.shapes[id], self.values[id].clone()).expect("node is consistent")
    }

    pub fn requires_grad(&self, id: VarId) -> bool {
        self.requires[id]
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, requires: bool, back: Option<BackFn<T>>) -> VarId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite value produced by an op");
        self.shapes.push(shape);
        self.values.push(data);
        self.requires.push(requires);
        self.backs.push(back);
        self.shapes.len() - 1
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> VarId {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), false, None)
    }

    /// Differentiable input (parameter).
    pub fn leaf(&mut self, t: Tensor<T>) -> VarId {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), true, None)
    }

    // ---- elementwise ----

    fn check_same_shape(&self, a: VarId, b: VarId, op: &str) -> Result<()> {
        if self.shapes[a] != self.shapes[b] {
            return Err(Error::Shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shapes[a], self.shapes[b]
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check_same_shape(a, b, "add")?;
        let data: Vec<T> = self.values[a].iter().zip(&self.values[b]).map(|(&x, &y)| x + y).collect();
        let req = self.requires[a] || self.requires[b];
        let back: Option<BackFn<T>> = req.then(|| {
            Box::new(move |_v: &[Vec<T>], _s: &[Vec<usize>], go: &[T], grads: &mut [Vec<T>]| {
                accumulate(&mut grads[a], go, |g| g);
                accumulate(&mut grads[b], go, |g| g);
            }) as BackFn<T>
        });
        Ok(self.push(self.shapes[a].clone(), data, req, back))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check_same_shape(a, b, "sub")?;
        let data: Vec<T> = self.values[a].iter().zip(&self.values[b]).map(|(&x, &y)| x - y).collect();
        let req = self.requires[a] || self.requires[b];
        let back: Option<BackFn<T>> = req.then(|| {
            Box::new(move |_v: &[Vec<T>], _s: &[Vec<usize>], go: &[T], grads: &mut [Vec<T>]| {
                accumulate(&mut grads[a], go, |g| g);
                accumulate(&mut grads[b], go, |g| -g);
            }) as BackFn<T>
        });
        Ok(self.push(self.shapes[a].clone(), data, req, back))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check_same_shape(a, b, "mul")?;
        let data: Vec<T> = self.values[a].iter().zip(&self.values[b]).map(|(&x, &y)| x * y).collect();
        let req = self.requires[a] || self.requires[b];
        let back: Option<BackFn<T>> = req.then(|| {
            Box::new(move |v: &[Vec<T>], _s: &[Vec<usize>], go: &[T], grads: &mut [Vec<T>]| {
                if !grads[a].is_empty() {
                    for (i, &g) in go.iter().enumerate() {
                        grads[a][i] += g * v[b][i];
                    }
                }
                if !grads[b].is_empty() {
                    for (i, &g) in go.iter().enumerate() {
                        grads[b][i] += g * v[a][i];
                    }
                }
            }) as BackFn<T>
        });
        Ok(self.push(self.shapes[a].clone(), data, req, back))
    }

    pub fn scale(&mut self, a: VarId, c: T) -> VarId {
        let data: Vec<T> = self.values[a].iter().map(|&x| c * x).collect();
        let req = self.requires[a];
        let back: Option<BackFn<T>> = req.then(|| {
            Box::new(move |_v: &[Vec<T>], _s: &[Vec<usize>], go: &[T], grads: &mut [Vec<T>]| {
                accumulate(&mut grads[a], go, |g| c * g);
            }) as BackFn<T>
        });
        self.push(self.shapes[a].clone(), data, req, back)
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let data: Vec<T> =
            self.values[a].iter().map(|&x| T::one() / (T::one() + (-x).exp())).collect();
        let req = self.requires[a];
        let id = self.push(self.shapes[a].clone(), data, req, None);
        if req {
            self.backs[id] = Some(Box::new(
                move |v: &[Vec<T>], _s: &[Vec<usize>], go: &[T], grads: &mut [Vec<T>]| {
                    if !grads[a].is_empty() {
                        for (i, &g) in go.iter().enumerate() {
                            let y = v[id][i];
                            grads[a][i] += g * y * (T::one() - y);
                        }
                    }
                },
            ));
        }
        id
    }

    /// `x` if `x >= 0` else `slope * x`; `slope` is a single-element tensor.
    pub fn prelu(&mut self, a: VarId, slope: VarId) -> Result<VarId> {
        if self.shapes[slope] != [1] {
            return Err(Error::Shape("prelu slope must have shape [1]".into()));
        }
        let s = self.values[slope][0];
        let data: Vec<T> =
            self.values[a].iter().map(|&x| if x >= T::zero() { x } else { s * x }).collect();
        let req = self.requires[a] || self.requires[slope];
        let back: Option<BackFn<T>> = req.then(|| {
            Box::new(move |v: &[Vec<T>], _s: &[Vec<usize>], go: &[T], grads: &mut [Vec<T>]| {
                let s = v[slope][0];
                if !grads[a].is_empty() {
                    for (i, &g) in go.iter().enumerate() {
                        grads[a][i] += if v[a][i] >= T::zero() { g } else { g * s };
                    }
                }
                if !grads[slope].is_empty() {
                    let mut acc = T::zero();
                    for (i, &g) in go.iter().enumerate() {
                        if v[a][i] < T::zero() {
                            acc += g * v[a][i];
                        }
                    }
                    grads[slope][0] += acc;
                }
            }) as BackFn<T>
        });
        Ok(self.push(self.shapes[a].clone(), data, req, back))
    }

    /// Elementwise `sqrt(a^2 + b^2)` with a guarded gradient at the origin.
    pub fn hypot(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check_same_shape(a, b, "hypot")?;
        let data: Vec<T> =
            self.values[a].iter().zip(&self.values[b]).map(|(&x, &y)| x.hypot(y)).collect();
        let req = self.requires[a] || self.requires[b];
        let id = self.push(self.shapes[a].clone(), data, req, None);
        if req {
            self.backs[id] = Some(Box::new(
                move |v: &[Vec<T>], _s: &[Vec<usize>], go: &[T], grads: &mut [Vec<T>]| {
                    let tiny = T::from_f64(1e-20);
                    for (i, &g) in go.iter().enumerate() {
                        let m = v[id][i].max(tiny);
                        if !grads[a].is_empty() {
                            grads[a][i] += g * v[a][i] / m;
                        }
                        if !grads[b].is_empty() {
                            grads[b][i] += g * v[b][i] / m;
                        }
                    }
                },
            ));
        }
        Ok(id)
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: VarId) -> VarId {
        let total: T = self.values[a].iter().copied().sum();
        let req = self.requires[a];
        let back: Option<BackFn<T>> = req.then(|| {
            Box::new(move |_v: &[Vec<T>], _s: &[Vec<usize>], go: &[T], grads: &mut [Vec<T>]| {
                if !grads[a].is_empty() {
                    let g = go[0];
                    for slot in grads[a].iter_mut() {
                        *slot += g;
                    }
                }
            }) as BackFn<T>
        });
        self.push(vec![1], vec![total], req, back)
    }

    pub fn mean(&mut self, a: VarId) -> VarId {
        let n = self.values[a].len();
        let total: T = self.values[a].iter().copied().sum();
        let inv = T::one() / T::from_f64(n as f64);
        let req = self.requires[a];
        let back: Option<BackFn<T>> = req.then(|| {
            Box::new(move |_v: &[Vec<T>], _s: &[Vec<usize>], go: &[T], grads: &mut [Vec<T>]| {
                if !grads[a].is_empty() {
                    let g = go[0] * inv;
                    for slot in grads[a].iter_mut() {
                        *slot += g;
                    }
                }
            }) as BackFn<T>
        });
        self.push(vec![1], vec![total * inv], req, back)
    }

    // ---- structural ----

    pub fn reshape(&mut self, a: VarId, shape: &[usize]) -> Result<VarId> {
        if shape.iter().product::<usize>() != self.values[a].len() {
            return Err(Error::Shape(format!(
                "reshape: {:?} has {} elements, requested {:?}",
                self.shapes[a],
                self.values[a].len(),
                shape
            )));
        }
        let req = self.requires[a];
        let back: Option<BackFn<T>> = req.then(|| {
            Box::new(move |_v: &[Vec<T>], _s: &[Vec<usize>], go: &[T], grads: &mut [Vec<T>]| {
                accumulate(&mut grads[a], go, |g| g);
            }) as BackFn<T>
        });
        Ok(self.push(shape.to_vec(), self.values[a].clone(), req, back))
    }

    /// Swap the last two axes of a 4-D tensor.
    pub fn transpose23(&mut self, a: VarId) -> Result<VarId> {
        let sh = self.shapes[a].clone();
        if sh.len() != 4 {
            return Err(Error::Shape(format!("transpose23 expects 4-D input, got {sh:?}")));
        }
        let (d0, d1, d2, d3) = (sh[0], sh[1], sh[2], sh[3]);
        let src = &self.values[a];
        let mut data = vec![T::zero(); src.len()];
        for o in 0..d0 * d1 {
            let base = o * d2 * d3;
            for i in 0..d2 {
                for j in 0..d3 {
                    data[base + j * d2 + i] = src[base + i * d3 + j];
                }
            }
        }
        let req = self.requires[a];
        let back: Option<BackFn<T>> = req.then(|| {
            Box::new(move |_v: &[Vec<T>], _s: &[Vec<usize>], go: &[T], grads: &mut [Vec<T>]| {
                if !grads[a].is_empty() {
                    for o in 0..d0 * d1 {
                        let base = o * d2 * d3;
                        for i in 0..d2 {
                            for j in 0..d3 {
                                grads[a][base + i * d3 + j] += go[base + j * d2 + i];
                            }
                        }
                    }
                }
            }) as BackFn<T>
        });
        Ok(self.push(vec![d0, d1, d3, d2], data, req, back))
    }

    pub fn concat(&mut self, parts: &[VarId], axis: usize) -> Result<VarId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of zero tensors".into()));
        }
        let rank = self.shapes[parts[0]].len();
        if axis >= rank {
            return Err(Error::Shape(format!("concat axis {axis} out of range for rank {rank}")));
        }
        for &p in parts {
            let sh = &self.shapes[p];
            if sh.len() != rank
                || sh.iter().enumerate().any(|(i, &d)| i != axis && d != self.shapes[parts[0]][i])
            {
                return Err(Error::Shape(format!(
                    "concat: incompatible shapes {:?} vs {:?} on axis {axis}",
                    self.shapes[parts[0]], sh
                )));
            }
        }
        let mut out_shape = self.shapes[parts[0]].clone();
        out_shape[axis] = parts.iter().map(|&p| self.shapes[p][axis]).sum();
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let total_axis = out_shape[axis];

        let mut data = vec![T::zero(); outer * total_axis * inner];
        let mut offset = 0usize;
        for &p in parts {
            let d_axis = self.shapes[p][axis];
            let src = &self.values[p];
            for o in 0..outer {
                let dst_base = (o * total_axis + offset) * inner;
                let src_base = o * d_axis * inner;
                data[dst_base..dst_base + d_axis * inner]
                    .copy_from_slice(&src[src_base..src_base + d_axis * inner]);
            }
            offset += d_axis;
        }

        let req = parts.iter().any(|&p| self.requires[p]);
        let parts_vec: Vec<VarId> = parts.to_vec();
        let axis_dims: Vec<usize> = parts.iter().map(|&p| self.shapes[p][axis]).collect();
        let back: Option<BackFn<T>> = req.then(|| {
            Box::new(move |_v: &[Vec<T>], _s: &[Vec<usize>], go: &[T], grads: &mut [Vec<T>]| {
                let mut offset = 0usize;
                for (idx, &p) in parts_vec.iter().enumerate() {
                    let d_axis = axis_dims[idx];
                    if !grads[p].is_empty() {
                        for o in 0..outer {
                            let src_base = (o * total_axis + offset) * inner;
                            let dst_base = o * d_axis * inner;
                            for i in 0..d_axis * inner {
                                grads[p][dst_base + i] += go[src_base + i];
                            }
                        }
                    }
                    offset += d_axis;
                }
            }) as BackFn<T>
        });
        Ok(self.push(out_shape, data, req, back))
    }

    pub fn slice_axis(&mut self, a: VarId, axis: usize, start: usize, len: usize) -> Result<VarId> {
        let sh = self.shapes[a].clone();
        if axis >= sh.len() || start + len > sh[axis] {
            return Err(Error::Shape(format!(
                "slice_axis: range {start}..{} out of bounds for {sh:?} axis {axis}",
                start + len
            )));
        }
        let outer: usize = sh[..axis].iter().product();
        let inner: usize = sh[axis + 1..].iter().product();
        let d_axis = sh[axis];
        let src = &self.values[a];
        let mut data = vec![T::zero(); outer * len * inner];
        for o in 0..outer {
            let src_base = (o * d_axis + start) * inner;
            let dst_base = o * len * inner;
            data[dst_base..dst_base + len * inner].copy_from_slice(&src[src_base..src_base + len * inner]);
        }
        let mut out_shape = sh.clone();
        out_shape[axis] = len;
        let req = self.requires[a];
        let back: Option<BackFn<T>> = req.then(|| {
            Box::new(move |_v: &[Vec<T>], _s: &[Vec<usize>], go: &[T], grads: &mut [Vec<T>]| {
                if !grads[a].is_empty() {
                    for o in 0..outer {
                        let dst_base = (o * d_axis + start) * inner;
                        let src_base = o * len * inner;
                        for i in 0..len * inner {
                            grads[a][dst_base + i] += go[src_base + i];
                        }
                    }
                }
            }) as BackFn<T>
        });
        Ok(self.push(out_shape, data, req, back))
    }

    // ---- convolutions ----

    /// 2-D convolution over `[N, C, T, F]`. Time stride is 1 and time
    /// padding is applied to past frames only (`pad_t` zeros on the left),
    /// so the op is causal. Frequency has stride `stride_f` and an
    /// asymmetric `(lo, hi)` zero pad.
    pub fn conv2d(
        &mut self,
        x: VarId,
        w: VarId,
        b: Option<VarId>,
        stride_f: usize,
        pad_t: usize,
        pad_f: (usize, usize),
    ) -> Result<VarId> {
        let xs = self.shapes[x].clone();
        let ws = self.shapes[w].clone();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::Shape(format!("conv2d expects 4-D x and w, got {xs:?} / {ws:?}")));
        }
        let (n_b, c_in, t_in, f_in) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, wc_in, k_t, k_f) = (ws[0], ws[1], ws[2], ws[3]);
        if wc_in != c_in {
            return Err(Error::Shape(format!(
                "conv2d: input has {c_in} channels, kernel expects {wc_in}"
            )));
        }
        if let Some(b) = b {
            if self.shapes[b] != [c_out] {
                return Err(Error::Shape("conv2d: bias shape must be [c_out]".into()));
            }
        }
        if t_in + pad_t < k_t || f_in + pad_f.0 + pad_f.1 < k_f || stride_f == 0 {
            return Err(Error::Shape("conv2d: kernel larger than padded input".into()));
        }
        let t_out = t_in + pad_t - k_t + 1;
        let f_out = (f_in + pad_f.0 + pad_f.1 - k_f) / stride_f + 1;

        let geo = Conv2dGeo { n_b, c_in, t_in, f_in, c_out, k_t, k_f, stride_f, pad_t, pad_f_lo: pad_f.0, t_out, f_out };
        let data = conv2d_forward(&self.values[x], &self.values[w], b.map(|b| self.values[b].as_slice()), &geo);

        let req = self.requires[x] || self.requires[w] || b.map_or(false, |b| self.requires[b]);
        let back: Option<BackFn<T>> = req.then(|| {
            Box::new(move |v: &[Vec<T>], _s: &[Vec<usize>], go: &[T], grads: &mut [Vec<T>]| {
                let mut split = split3(grads, x, w, b);
                conv2d_backward(&v[x], &v[w], go, &geo, &mut split);
                restore3(grads, split, x, w, b);
            }) as BackFn<T>
        });
        Ok(self.push(vec![n_b, c_out, t_out, f_out], data, req, back))
    }

    /// Transposed 2-D convolution over `[N, C, T, F]` with frequency stride
    /// `stride_f`. Weights are `[C_in, C_out, K_t, K_f]`. The full time
    /// output is cropped at the tail back to the input length (causal); the
    /// full frequency output is cropped at the low side down to `out_f`.
    pub fn conv_transpose2d(
        &mut self,
        x: VarId,
        w: VarId,
        b: Option<VarId>,
        stride_f: usize,
        out_f: usize,
    ) -> Result<VarId> {
        let xs = self.shapes[x].clone();
        let ws = self.shapes[w].clone();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::Shape(format!("conv_transpose2d expects 4-D x and w, got {xs:?} / {ws:?}")));
        }
        let (n_b, c_in, t_in, f_in) = (xs[0], xs[1], xs[2], xs[3]);
        let (wc_in, c_out, k_t, k_f) = (ws[0], ws[1], ws[2], ws[3]);
        if wc_in != c_in {
            return Err(Error::Shape(format!(
                "conv_transpose2d: input has {c_in} channels, kernel expects {wc_in}"
            )));
        }
        if let Some(b) = b {
            if self.shapes[b] != [c_out] {
                return Err(Error::Shape("conv_transpose2d: bias shape must be [c_out]".into()));
            }
        }
        let full_f = (f_in - 1) * stride_f + k_f;
        if out_f > full_f || stride_f == 0 {
            return Err(Error::Shape(format!(
                "conv_transpose2d: requested {out_f} frequency bins, full output has {full_f}"
            )));
        }
        let crop_lo = full_f - out_f;
        let t_out = t_in;

        let geo = ConvT2dGeo { n_b, c_in, t_in, f_in, c_out, k_t, k_f, stride_f, crop_lo, t_out, f_out: out_f };
        let data =
            convt2d_forward(&self.values[x], &self.values[w], b.map(|b| self.values[b].as_slice()), &geo);

        let req = self.requires[x] || self.requires[w] || b.map_or(false, |b| self.requires[b]);
        let back: Option<BackFn<T>> = req.then(|| {
            Box::new(move |v: &[Vec<T>], _s: &[Vec<usize>], go: &[T], grads: &mut [Vec<T>]| {
                let mut split = split3(grads, x, w, b);
                convt2d_backward(&v[x], &v[w], go, &geo, &mut split);
                restore3(grads, split, x, w, b);
            }) as BackFn<T>
        });
        Ok(self.push(vec![n_b, c_out, t_out, out_f], data, req, back))
    }

    /// Dilated causal 1-D convolution over `[N, C, T]` with left zero
    /// padding of `(kernel - 1) * dilation` frames.
    pub fn conv1d_dilated_causal(
        &mut self,
        x: VarId,
        w: VarId,
        b: Option<VarId>,
        dilation: usize,
    ) -> Result<VarId> {
        let xs = self.shapes[x].clone();
        let ws = self.shapes[w].clone();
        if xs.len() != 3 || ws.len() != 3 {
            return Err(Error::Shape(format!("conv1d expects 3-D x and w, got {xs:?} / {ws:?}")));
        }
        if dilation == 0 {
            return Err(Error::Shape("conv1d: dilation must be >= 1".into()));
        }
        let (n_b, c_in, t_in) = (xs[0], xs[1], xs[2]);
        let (c_out, wc_in, k) = (ws[0], ws[1], ws[2]);
        if wc_in != c_in {
            return Err(Error::Shape(format!("conv1d: input has {c_in} channels, kernel expects {wc_in}")));
        }
        if let Some(b) = b {
            if self.shapes[b] != [c_out] {
                return Err(Error::Shape("conv1d: bias shape must be [c_out]".into()));
            }
        }

        let geo = Conv1dGeo { n_b, c_in, t_in, c_out, k, dilation };
        let data =
            conv1d_forward(&self.values[x], &self.values[w], b.map(|b| self.values[b].as_slice()), &geo);

        let req = self.requires[x] || self.requires[w] || b.map_or(false, |b| self.requires[b]);
        let back: Option<BackFn<T>> = req.then(|| {
            Box::new(move |v: &[Vec<T>], _s: &[Vec<usize>], go: &[T], grads: &mut [Vec<T>]| {
                let mut split = split3(grads, x, w, b);
                conv1d_backward(&v[x], &v[w], go, &geo, &mut split);
                restore3(grads, split, x, w, b);
            }) as BackFn<T>
        });
        Ok(self.push(vec![n_b, c_out, t_in], data, req, back))
    }

    // ---- normalization ----

    /// Instance normalization over `[N, C, T, F]`: zero mean / unit variance
    /// per (sample, channel) over the full T x F plane, then per-channel
    /// affine. Not causal; the model's time-causal stacks use
    /// [`Graph::frame_norm2d`] instead.
    pub fn instance_norm(&mut self, x: VarId, gamma: VarId, beta: VarId, eps: T) -> Result<VarId> {
        let sh = self.shapes[x].clone();
        if sh.len() != 4 {
            return Err(Error::Shape("instance_norm expects 4-D input".into()));
        }
        let (n_b, c_n, t_n, f_n) = (sh[0], sh[1], sh[2], sh[3]);
        self.norm_impl(x, gamma, beta, eps, n_b * c_n, t_n * f_n)
    }

    /// Per-frame normalization over `[N, C, T, F]`: statistics over the F
    /// axis for each (sample, channel, frame), per-channel affine. Causal
    /// because no statistic crosses frames.
    pub fn frame_norm2d(&mut self, x: VarId, gamma: VarId, beta: VarId, eps: T) -> Result<VarId> {
        let sh = self.shapes[x].clone();
        if sh.len() != 4 {
            return Err(Error::Shape("frame_norm2d expects 4-D input".into()));
        }
        let (n_b, c_n, t_n, f_n) = (sh[0], sh[1], sh[2], sh[3]);
        self.norm_impl(x, gamma, beta, eps, n_b * c_n * t_n, f_n)
    }

    /// Per-frame normalization over `[N, C, T]`: statistics over the channel
    /// axis for each (sample, frame), per-channel affine. Causal.
    pub fn frame_norm1d(&mut self, x: VarId, gamma: VarId, beta: VarId, eps: T) -> Result<VarId> {
        let sh = self.shapes[x].clone();
        if sh.len() != 3 {
            return Err(Error::Shape("frame_norm1d expects 3-D input".into()));
        }
        let (n_b, c_n, t_n) = (sh[0], sh[1], sh[2]);
        if self.shapes[gamma] != [c_n] || self.shapes[beta] != [c_n] {
            return Err(Error::Shape("frame_norm1d: gamma/beta must have shape [C]".into()));
        }
        if eps <= T::zero() {
            return Err(Error::Shape("norm eps must be positive".into()));
        }

        let src = &self.values[x];
        let gm = &self.values[gamma];
        let bt = &self.values[beta];
        let mut data = vec![T::zero(); src.len()];
        let inv_m = T::one() / T::from_f64(c_n as f64);
        for n in 0..n_b {
            for t in 0..t_n {
                let at = |c: usize| (n * c_n + c) * t_n + t;
                let mut mu = T::zero();
                for c in 0..c_n {
                    mu += src[at(c)];
                }
                mu = mu * inv_m;
                let mut var = T::zero();
                for c in 0..c_n {
                    let d = src[at(c)] - mu;
                    var += d * d;
                }
                var = var * inv_m;
                let inv_std = T::one() / (var + eps).sqrt();
                for c in 0..c_n {
                    let xhat = (src[at(c)] - mu) * inv_std;
                    data[at(c)] = gm[c] * xhat + bt[c];
                }
            }
        }

        let req = self.requires[x] || self.requires[gamma] || self.requires[beta];
        let back: Option<BackFn<T>> = req.then(|| {
            Box::new(move |v: &[Vec<T>], _s: &[Vec<usize>], go: &[T], grads: &mut [Vec<T>]| {
                let src = &v[x];
                let gm = &v[gamma];
                let inv_m = T::one() / T::from_f64(c_n as f64);
                for n in 0..n_b {
                    for t in 0..t_n {
                        let at = |c: usize| (n * c_n + c) * t_n + t;
                        let mut mu = T::zero();
                        for c in 0..c_n {
                            mu += src[at(c)];
                        }
                        mu = mu * inv_m;
                        let mut var = T::zero();
                        for c in 0..c_n {
                            let d = src[at(c)] - mu;
                            var += d * d;
                        }
                        var = var * inv_m;
                        let inv_std = T::one() / (var + eps).sqrt();

                        let mut mean_gh = T::zero();
                        let mut mean_ghx = T::zero();
                        for c in 0..c_n {
                            let xhat = (src[at(c)] - mu) * inv_std;
                            let gh = go[at(c)] * gm[c];
                            mean_gh += gh;
                            mean_ghx += gh * xhat;
                        }
                        mean_gh = mean_gh * inv_m;
                        mean_ghx = mean_ghx * inv_m;
                        for c in 0..c_n {
                            let xhat = (src[at(c)] - mu) * inv_std;
                            if !grads[x].is_empty() {
                                let gh = go[at(c)] * gm[c];
                                grads[x][at(c)] += inv_std * (gh - mean_gh - xhat * mean_ghx);
                            }
                            if !grads[gamma].is_empty() {
                                grads[gamma][c] += go[at(c)] * xhat;
                            }
                            if !grads[beta].is_empty() {
                                grads[beta][c] += go[at(c)];
                            }
                        }
                    }
                }
            }) as BackFn<T>
        });
        Ok(self.push(sh, data, req, back))
    }

    /// Shared kernel for [`Graph::instance_norm`] and [`Graph::frame_norm2d`]:
    /// both normalize contiguous groups of `group_len` elements; the channel
    /// index for the affine parameters is recovered from the group index.
    fn norm_impl(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        eps: T,
        groups: usize,
        group_len: usize,
    ) -> Result<VarId> {
        let sh = self.shapes[x].clone();
        let c_n = sh[1];
        if self.shapes[gamma] != [c_n] || self.shapes[beta] != [c_n] {
            return Err(Error::Shape("norm: gamma/beta must have shape [C]".into()));
        }
        if eps <= T::zero() {
            return Err(Error::Shape("norm eps must be positive".into()));
        }
        // groups are contiguous and ordered (n, c) or (n, c, t); either way
        // the channel index is recoverable from the group index
        let groups_per_channel_block = groups / (sh[0] * c_n);
        let channels = c_n;
        let chan_of_group = move |g: usize| (g / groups_per_channel_block) % channels;

        let src = &self.values[x];
        let gm = &self.values[gamma];
        let bt = &self.values[beta];
        let mut data = vec![T::zero(); src.len()];
        let inv_m = T::one() / T::from_f64(group_len as f64);
        for g in 0..groups {
            let base = g * group_len;
            let c = chan_of_group(g);
            let seg = &src[base..base + group_len];
            let mu: T = seg.iter().copied().sum::<T>() * inv_m;
            let var: T = seg.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_m;
            let inv_std = T::one() / (var + eps).sqrt();
            for i in 0..group_len {
                data[base + i] = gm[c] * (seg[i] - mu) * inv_std + bt[c];
            }
        }

        let req = self.requires[x] || self.requires[gamma] || self.requires[beta];
        let back: Option<BackFn<T>> = req.then(|| {
            Box::new(move |v: &[Vec<T>], _s: &[Vec<usize>], go: &[T], grads: &mut [Vec<T>]| {
                let src = &v[x];
                let gm = &v[gamma];
                let inv_m = T::one() / T::from_f64(group_len as f64);
                for g in 0..groups {
                    let base = g * group_len;
                    let c = chan_of_group(g);
                    let seg = &src[base..base + group_len];
                    let mu: T = seg.iter().copied().sum::<T>() * inv_m;
                    let var: T = seg.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_m;
                    let inv_std = T::one() / (var + eps).sqrt();
                    let gseg = &go[base..base + group_len];

                    let mut mean_g = T::zero();
                    let mut mean_gx = T::zero();
                    for i in 0..group_len {
                        let xhat = (seg[i] - mu) * inv_std;
                        mean_g += gseg[i];
                        mean_gx += gseg[i] * xhat;
                    }
                    mean_g = mean_g * inv_m;
                    mean_gx = mean_gx * inv_m;

                    for i in 0..group_len {
                        let xhat = (seg[i] - mu) * inv_std;
                        if !grads[x].is_empty() {
                            grads[x][base + i] += gm[c] * inv_std * (gseg[i] - mean_g - xhat * mean_gx);
                        }
                        if !grads[gamma].is_empty() {
                            grads[gamma][c] += gseg[i] * xhat;
                        }
                        if !grads[beta].is_empty() {
                            grads[beta][c] += gseg[i];
                        }
                    }
                }
            }) as BackFn<T>
        });
        Ok(self.push(sh, data, req, back))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar `loss` node. Returns one gradient buffer
    /// per node; buffers are empty for nodes that do not require gradients.
    pub fn backward(&mut self, loss: VarId) -> Result<Vec<Vec<T>>> {
        if self.shapes[loss].iter().product::<usize>() != 1 {
            return Err(Error::Shape(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shapes[loss]
            )));
        }
        let mut grads: Vec<Vec<T>> = (0..self.len())
            .map(|i| if self.requires[i] { vec![T::zero(); self.values[i].len()] } else { Vec::new() })
            .collect();
        if !self.requires[loss] {
            return Ok(grads);
        }
        grads[loss][0] = T::one();
        for id in (0..=loss).rev() {
            if self.backs[id].is_none() || grads[id].is_empty() {
                continue;
            }
            let go = std::mem::take(&mut grads[id]);
            let back = self.backs[id].take();
            if let Some(back) = &back {
                back(&self.values, &self.shapes, &go, &mut grads);
            }
            self.backs[id] = back;
            grads[id] = go;
        }
        Ok(grads)
    }
}

fn accumulate<T: Real>(dst: &mut [T], src: &[T], f: impl Fn(T) -> T) {
    if dst.is_empty() {
        return;
    }
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += f(s);
    }
}

/// Gradient buffers for a convolution's (input, weight, bias). Buffers stay
/// empty when the corresponding node does not require gradients.
type SplitGrads<T> = (Vec<T>, Vec<T>, Vec<T>);

/// Temporarily take the (x, w, b) gradient buffers out of the table so the
/// kernel can write all three without aliasing the table borrow.
fn split3<T: Real>(grads: &mut [Vec<T>], x: VarId, w: VarId, b: Option<VarId>) -> SplitGrads<T> {
    let gx = std::mem::take(&mut grads[x]);
    let gw = std::mem::take(&mut grads[w]);
    let gb = match b {
        Some(b) => std::mem::take(&mut grads[b]),
        None => Vec::new(),
    };
    (gx, gw, gb)
}

fn restore3<T: Real>(grads: &mut [Vec<T>], split: SplitGrads<T>, x: VarId, w: VarId, b: Option<VarId>) {
    let (gx, gw, gb) = split;
    grads[x] = gx;
    grads[w] = gw;
    if let Some(b) = b {
        grads[b] = gb;
    }
}

// ---- conv2d kernels ----

#[derive(Clone, Copy)]
struct Conv2dGeo {
    n_b: usize,
    c_in: usize,
    t_in: usize,
    f_in: usize,
    c_out: usize,
    k_t: usize,
    k_f: usize,
    stride_f: usize,
    pad_t: usize,
    pad_f_lo: usize,
    t_out: usize,
    f_out: usize,
}

impl Conv2dGeo {
    /// Valid output-frequency range `[lo, hi)` for kernel tap `kf`.
    fn f_range(&self, kf: usize) -> (usize, usize) {
        let lo = if kf >= self.pad_f_lo {
            0
        } else {
            (self.pad_f_lo - kf + self.stride_f - 1) / self.stride_f
        };
        let max_fin = self.f_in - 1 + self.pad_f_lo;
        let hi = if max_fin >= kf { ((max_fin - kf) / self.stride_f + 1).min(self.f_out) } else { 0 };
        (lo, hi)
    }
}

fn conv2d_forward<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, g: &Conv2dGeo) -> Vec<T> {
    let mut out = vec![T::zero(); g.n_b * g.c_out * g.t_out * g.f_out];
    for n in 0..g.n_b {
        for co in 0..g.c_out {
            let bias = b.map_or(T::zero(), |b| b[co]);
            for t_out in 0..g.t_out {
                let row_base = ((n * g.c_out + co) * g.t_out + t_out) * g.f_out;
                let row = &mut out[row_base..row_base + g.f_out];
                for slot in row.iter_mut() {
                    *slot = bias;
                }
                for ci in 0..g.c_in {
                    for kt in 0..g.k_t {
                        let t_sh = t_out + kt;
                        if t_sh < g.pad_t || t_sh - g.pad_t >= g.t_in {
                            continue;
                        }
                        let t_in_idx = t_sh - g.pad_t;
                        let x_base = ((n * g.c_in + ci) * g.t_in + t_in_idx) * g.f_in;
                        for kf in 0..g.k_f {
                            let wv = w[((co * g.c_in + ci) * g.k_t + kt) * g.k_f + kf];
                            let (lo, hi) = g.f_range(kf);
                            for f_out in lo..hi {
                                let f_in_idx = f_out * g.stride_f + kf - g.pad_f_lo;
                                row[f_out] += wv * x[x_base + f_in_idx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward<T: Real>(x: &[T], w: &[T], go: &[T], g: &Conv2dGeo, split: &mut SplitGrads<T>) {
    let (gx, gw, gb) = split;
    for n in 0..g.n_b {
        for co in 0..g.c_out {
            for t_out in 0..g.t_out {
                let go_row = &go[((n * g.c_out + co) * g.t_out + t_out) * g.f_out..][..g.f_out];
                if !gb.is_empty() {
                    let mut acc = T::zero();
                    for &v in go_row {
                        acc += v;
                    }
                    gb[co] += acc;
                }
                for ci in 0..g.c_in {
                    for kt in 0..g.k_t {
                        let t_sh = t_out + kt;
                        if t_sh < g.pad_t || t_sh - g.pad_t >= g.t_in {
                            continue;
                        }
                        let t_in_idx = t_sh - g.pad_t;
                        let x_base = ((n * g.c_in + ci) * g.t_in + t_in_idx) * g.f_in;
                        for kf in 0..g.k_f {
                            let w_idx = ((co * g.c_in + ci) * g.k_t + kt) * g.k_f + kf;
                            let wv = w[w_idx];
                            let (lo, hi) = g.f_range(kf);
                            if !gw.is_empty() {
                                let mut acc = T::zero();
                                for f_out in lo..hi {
                                    acc += go_row[f_out] * x[x_base + f_out * g.stride_f + kf - g.pad_f_lo];
                                }
                                gw[w_idx] += acc;
                            }
                            if !gx.is_empty() {
                                for f_out in lo..hi {
                                    gx[x_base + f_out * g.stride_f + kf - g.pad_f_lo] += wv * go_row[f_out];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

// ---- conv_transpose2d kernels ----

#[derive(Clone, Copy)]
struct ConvT2dGeo {
    n_b: usize,
    c_in: usize,
    t_in: usize,
    f_in: usize,
    c_out: usize,
    k_t: usize,
    k_f: usize,
    stride_f: usize,
    crop_lo: usize,
    t_out: usize,
    f_out: usize,
}

impl ConvT2dGeo {
    /// First cropped output bin fed by tap `kf`, with its source bin.
    fn f_start(&self, kf: usize) -> Option<(usize, usize)> {
        // out bin f corresponds to full bin f + crop_lo = fi * stride_f + kf
        let (f, fi) = if self.crop_lo >= kf {
            let over = (self.crop_lo - kf) % self.stride_f;
            let f = if over == 0 { 0 } else { self.stride_f - over };
            (f, (f + self.crop_lo - kf) / self.stride_f)
        } else {
            (kf - self.crop_lo, 0)
        };
        (f < self.f_out && fi < self.f_in).then_some((f, fi))
    }
}

fn convt2d_forward<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, g: &ConvT2dGeo) -> Vec<T> {
    let mut out = vec![T::zero(); g.n_b * g.c_out * g.t_out * g.f_out];
    for n in 0..g.n_b {
        for co in 0..g.c_out {
            let bias = b.map_or(T::zero(), |b| b[co]);
            for t in 0..g.t_out {
                let row_base = ((n * g.c_out + co) * g.t_out + t) * g.f_out;
                let row = &mut out[row_base..row_base + g.f_out];
                for slot in row.iter_mut() {
                    *slot = bias;
                }
                for ci in 0..g.c_in {
                    for kt in 0..g.k_t {
                        if t < kt {
                            continue;
                        }
                        let ti = t - kt;
                        if ti >= g.t_in {
                            continue;
                        }
                        let x_base = ((n * g.c_in + ci) * g.t_in + ti) * g.f_in;
                        for kf in 0..g.k_f {
                            let wv = w[((ci * g.c_out + co) * g.k_t + kt) * g.k_f + kf];
                            if let Some((mut f, mut fi)) = g.f_start(kf) {
                                while f < g.f_out && fi < g.f_in {
                                    row[f] += wv * x[x_base + fi];
                                    f += g.stride_f;
                                    fi += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn convt2d_backward<T: Real>(x: &[T], w: &[T], go: &[T], g: &ConvT2dGeo, split: &mut SplitGrads<T>) {
    let (gx, gw, gb) = split;
    for n in 0..g.n_b {
        for co in 0..g.c_out {
            for t in 0..g.t_out {
                let go_row = &go[((n * g.c_out + co) * g.t_out + t) * g.f_out..][..g.f_out];
                if !gb.is_empty() {
                    let mut acc = T::zero();
                    for &v in go_row {
                        acc += v;
                    }
                    gb[co] += acc;
                }
                for ci in 0..g.c_in {
                    for kt in 0..g.k_t {
                        if t < kt {
                            continue;
                        }
                        let ti = t - kt;
                        if ti >= g.t_in {
                            continue;
                        }
                        let x_base = ((n * g.c_in + ci) * g.t_in + ti) * g.f_in;
                        for kf in 0..g.k_f {
                            let w_idx = ((ci * g.c_out + co) * g.k_t + kt) * g.k_f + kf;
                            let wv = w[w_idx];
                            if let Some((sf, sfi)) = g.f_start(kf) {
                                if !gw.is_empty() {
                                    let mut acc = T::zero();
                                    let (mut f, mut fi) = (sf, sfi);
                                    while f < g.f_out && fi < g.f_in {
                                        acc += go_row[f] * x[x_base + fi];
                                        f += g.stride_f;
                                        fi += 1;
                                    }
                                    gw[w_idx] += acc;
                                }
                                if !gx.is_empty() {
                                    let (mut f, mut fi) = (sf, sfi);
                                    while f < g.f_out && fi < g.f_in {
                                        gx[x_base + fi] += wv * go_row[f];
                                        f += g.stride_f;
                                        fi += 1;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

// ---- conv1d kernels ----

#[derive(Clone, Copy)]
struct Conv1dGeo {
    n_b: usize,
    c_in: usize,
    t_in: usize,
    c_out: usize,
    k: usize,
    dilation: usize,
}

fn conv1d_forward<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, g: &Conv1dGeo) -> Vec<T> {
    let mut out = vec![T::zero(); g.n_b * g.c_out * g.t_in];
    for n in 0..g.n_b {
        for co in 0..g.c_out {
            let bias = b.map_or(T::zero(), |b| b[co]);
            let row_base = (n * g.c_out + co) * g.t_in;
            let row = &mut out[row_base..row_base + g.t_in];
            for slot in row.iter_mut() {
                *slot = bias;
            }
            for ci in 0..g.c_in {
                let x_base = (n * g.c_in + ci) * g.t_in;
                let xrow = &x[x_base..x_base + g.t_in];
                for k in 0..g.k {
                    let offset = (g.k - 1 - k) * g.dilation;
                    if offset >= g.t_in {
                        continue;
                    }
                    let wv = w[(co * g.c_in + ci) * g.k + k];
                    for t in offset..g.t_in {
                        row[t] += wv * xrow[t - offset];
                    }
                }
            }
        }
    }
    out
}

fn conv1d_backward<T: Real>(x: &[T], w: &[T], go: &[T], g: &Conv1dGeo, split: &mut SplitGrads<T>) {
    let (gx, gw, gb) = split;
    for n in 0..g.n_b {
        for co in 0..g.c_out {
            let go_row = &go[(n * g.c_out + co) * g.t_in..][..g.t_in];
            if !gb.is_empty() {
                let mut acc = T::zero();
                for &v in go_row {
                    acc += v;
                }
                gb[co] += acc;
            }
            for ci in 0..g.c_in {
                let x_base = (n * g.c_in + ci) * g.t_in;
                for k in 0..g.k {
                    let offset = (g.k - 1 - k) * g.dilation;
                    if offset >= g.t_in {
                        continue;
                    }
                    let w_idx = (co * g.c_in + ci) * g.k + k;
                    if !gw.is_empty() {
                        let mut acc = T::zero();
                        for t in offset..g.t_in {
                            acc += go_row[t] * x[x_base + t - offset];
                        }
                        gw[w_idx] += acc;
                    }
                    if !gx.is_empty() {
                        let wv = w[w_idx];
                        for t in offset..g.t_in {
                            gx[x_base + t - offset] += wv * go_row[t];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::grad_check;
    use super::*;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        }
    }

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut next = lcg(seed);
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| next()).collect()).unwrap()
    }

    #[test]
    fn pointwise_values() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[3], vec![0.0, -4.0, 2.0]).unwrap());
        let s = g.sigmoid(x);
        assert!((g.value(s)[0] - 0.5).abs() < 1e-15);
        let slope = g.leaf(Tensor::from_vec(&[1], vec![0.25]).unwrap());
        let p = g.prelu(x, slope).unwrap();
        assert_eq!(g.value(p), &[0.0, -1.0, 2.0]);
        let y = g.constant(Tensor::from_vec(&[3], vec![1.0, 3.0, -2.0]).unwrap());
        let h = g.hypot(x, y).unwrap();
        assert!((g.value(h)[1] - 5.0).abs() < 1e-15);
    }

    #[test]
    fn sum_of_squares_gradient() {
        // d/dx sum(x*x) at x = 3 is 6
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[1], vec![3.0]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert!((grads[x][0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap());
        let s = g.sigmoid(x);
        let loss = g.sum(s);
        let grads = g.backward(loss).unwrap();
        assert!((grads[x][0] - 0.25).abs() < 1e-12);
        assert!((grads[x][1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn backward_is_linear_in_upstream_gradient() {
        // scaling the loss by c scales every gradient by c
        let x0 = rand_tensor(&[6], 11);
        let run = |c: f64| {
            let mut g: Graph<f64> = Graph::new();
            let x = g.leaf(x0.clone());
            let s = g.sigmoid(x);
            let m = g.mul(s, x).unwrap();
            let total = g.sum(m);
            let loss = g.scale(total, c);
            let grads = g.backward(loss).unwrap();
            grads[x].clone()
        };
        let g1 = run(1.0);
        let g3 = run(3.0);
        for (a, b) in g1.iter().zip(&g3) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_and_slice_shapes() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.leaf(rand_tensor(&[2, 3], 1));
        let b = g.leaf(rand_tensor(&[2, 5], 2));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 8]);
        // row 0: first 3 from a, next 5 from b
        assert_eq!(&g.value(c)[..3], &g.value(a)[..3]);
        assert_eq!(&g.value(c)[3..8], &g.value(b)[..5]);
        let back = g.slice_axis(c, 1, 3, 5).unwrap();
        assert_eq!(g.value(back), g.value(b));
        assert!(g.concat(&[a, b], 0).is_err());
    }

    #[test]
    fn transpose23_roundtrip() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(rand_tensor(&[2, 3, 4, 5], 3));
        let t = g.transpose23(x).unwrap();
        assert_eq!(g.shape(t), &[2, 3, 5, 4]);
        let tt = g.transpose23(t).unwrap();
        assert_eq!(g.value(tt), g.value(x));
        // element check: x[0,0,1,2] == t[0,0,2,1]
        assert_eq!(g.value(x)[1 * 5 + 2], g.value(t)[2 * 4 + 1]);
    }

    #[test]
    fn conv2d_identity_kernel_passes_input_through() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(rand_tensor(&[1, 1, 4, 6], 4));
        let w = g.constant(Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap());
        let y = g.conv2d(x, w, None, 1, 0, (0, 0)).unwrap();
        assert_eq!(g.shape(y), g.shape(x));
        assert_eq!(g.value(y), g.value(x));
    }

    /// Plain nested-loop reference for conv2d, written independently of the
    /// production kernel's loop order and range precomputation.
    fn conv2d_naive(
        x: &[f64],
        w: &[f64],
        b: Option<&[f64]>,
        (n_b, c_in, t_in, f_in): (usize, usize, usize, usize),
        (c_out, k_t, k_f): (usize, usize, usize),
        stride_f: usize,
        pad_t: usize,
        pad_f: (usize, usize),
    ) -> Vec<f64> {
        let t_out = t_in + pad_t - k_t + 1;
        let f_out = (f_in + pad_f.0 + pad_f.1 - k_f) / stride_f + 1;
        let mut out = vec![0.0; n_b * c_out * t_out * f_out];
        for n in 0..n_b {
            for co in 0..c_out {
                for to in 0..t_out {
                    for fo in 0..f_out {
                        let mut acc = b.map_or(0.0, |b| b[co]);
                        for ci in 0..c_in {
                            for kt in 0..k_t {
                                for kf in 0..k_f {
                                    let ti = (to + kt) as isize - pad_t as isize;
                                    let fi = (fo * stride_f + kf) as isize - pad_f.0 as isize;
                                    if ti >= 0 && (ti as usize) < t_in && fi >= 0 && (fi as usize) < f_in {
                                        let xv = x[((n * c_in + ci) * t_in + ti as usize) * f_in + fi as usize];
                                        acc += xv * w[((co * c_in + ci) * k_t + kt) * k_f + kf];
                                    }
                                }
                            }
                        }
                        out[((n * c_out + co) * t_out + to) * f_out + fo] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_naive_reference() {
        // the ladder geometry: kernel (1,3)/(2,3), stride 2, pad_lo 1
        for (dims, kernel, stride_f, pad_t, pad_f, seed) in [
            ((2, 3, 5, 9), (4, 2, 3), 2, 1, (1, 0), 7u64),
            ((1, 2, 6, 7), (3, 1, 3), 2, 0, (1, 0), 8),
            ((1, 1, 4, 6), (2, 3, 2), 1, 2, (0, 1), 9),
        ] {
            let (n_b, c_in, t_in, f_in) = dims;
            let (c_out, k_t, k_f) = kernel;
            let xt = rand_tensor(&[n_b, c_in, t_in, f_in], seed);
            let wt = rand_tensor(&[c_out, c_in, k_t, k_f], seed + 100);
            let bt = rand_tensor(&[c_out], seed + 200);
            let expect = conv2d_naive(
                xt.data(), wt.data(), Some(bt.data()), dims, kernel, stride_f, pad_t, pad_f,
            );
            let mut g: Graph<f64> = Graph::new();
            let x = g.leaf(xt);
            let w = g.leaf(wt);
            let b = g.leaf(bt);
            let y = g.conv2d(x, w, Some(b), stride_f, pad_t, pad_f).unwrap();
            assert_eq!(g.value(y).len(), expect.len());
            for (a, e) in g.value(y).iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn conv2d_three_tap_frequency_average() {
        // kernel [1/3, 1/3, 1/3] along F with symmetric pad produces local means
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[1, 1, 1, 4], vec![3.0, 6.0, 9.0, 12.0]).unwrap());
        let w = g.constant(Tensor::from_vec(&[1, 1, 1, 3], vec![1.0 / 3.0; 3]).unwrap());
        let y = g.conv2d(x, w, None, 1, 0, (1, 1)).unwrap();
        let expect = [3.0, 6.0, 9.0, 7.0]; // edges see one zero pad
        for (a, e) in g.value(y).iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn conv2d_is_causal_in_time() {
        // perturbing input frame t must not change any output frame before t
        let base = rand_tensor(&[1, 2, 6, 5], 21);
        let run = |xt: Tensor<f64>| {
            let mut g: Graph<f64> = Graph::new();
            let x = g.leaf(xt);
            let w = g.leaf(rand_tensor(&[3, 2, 2, 3], 22));
            let y = g.conv2d(x, w, None, 2, 1, (1, 0)).unwrap();
            (g.value(y).to_vec(), g.shape(y).to_vec())
        };
        let (y0, sh) = run(base.clone());
        let t_perturb = 3usize;
        let mut bumped = base.clone();
        for f in 0..5 {
            bumped.data_mut()[(0 * 2 + 1) * 6 * 5 + t_perturb * 5 + f] += 1.0;
        }
        let (y1, _) = run(bumped);
        let (t_out, f_out) = (sh[2], sh[3]);
        for co in 0..sh[1] {
            for t in 0..t_perturb {
                for f in 0..f_out {
                    let idx = (co * t_out + t) * f_out + f;
                    assert_eq!(y0[idx], y1[idx], "output frame {t} changed by a frame-{t_perturb} edit");
                }
            }
        }
        assert_ne!(y0, y1);
    }

    #[test]
    fn conv_transpose2d_inverts_ladder_shape() {
        // encoder 9 -> 5 with k=3 s=2 pad_lo=1; decoder restores 9 bins
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(rand_tensor(&[1, 4, 3, 5], 31));
        let w = g.leaf(rand_tensor(&[4, 2, 2, 3], 32));
        let y = g.conv_transpose2d(x, w, None, 2, 9).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 3, 9]);
    }

    #[test]
    fn conv_transpose2d_matches_naive_scatter() {
        // reference: scatter every input cell through the kernel into the
        // full (T + Kt - 1) x ((F-1)*s + Kf) grid, then crop the time tail
        // back to T and the low-frequency side down to out_f
        let (n_b, c_in, c_out, t_in, f_in, k_t, k_f, s) = (2usize, 3, 2, 4, 5, 2, 3, 2);
        for out_f in [9usize, 8, 7] {
            let xt = rand_tensor(&[n_b, c_in, t_in, f_in], 41 + out_f as u64);
            let wt = rand_tensor(&[c_in, c_out, k_t, k_f], 141 + out_f as u64);
            let bt = rand_tensor(&[c_out], 241 + out_f as u64);
            let full_t = t_in + k_t - 1;
            let full_f = (f_in - 1) * s + k_f;
            let crop_lo = full_f - out_f;
            let mut full = vec![0.0; n_b * c_out * full_t * full_f];
            for n in 0..n_b {
                for ci in 0..c_in {
                    for t in 0..t_in {
                        for f in 0..f_in {
                            let xv = xt.data()[((n * c_in + ci) * t_in + t) * f_in + f];
                            for co in 0..c_out {
                                for kt in 0..k_t {
                                    for kf in 0..k_f {
                                        let wv = wt.data()[((ci * c_out + co) * k_t + kt) * k_f + kf];
                                        full[((n * c_out + co) * full_t + t + kt) * full_f
                                            + f * s
                                            + kf] += xv * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let mut expect = vec![0.0; n_b * c_out * t_in * out_f];
            for n in 0..n_b {
                for co in 0..c_out {
                    for t in 0..t_in {
                        for f in 0..out_f {
                            expect[((n * c_out + co) * t_in + t) * out_f + f] = bt.data()[co]
                                + full[((n * c_out + co) * full_t + t) * full_f + f + crop_lo];
                        }
                    }
                }
            }
            let mut g: Graph<f64> = Graph::new();
            let x = g.leaf(xt);
            let w = g.leaf(wt);
            let b = g.leaf(bt);
            let y = g.conv_transpose2d(x, w, Some(b), s, out_f).unwrap();
            assert_eq!(g.shape(y), &[n_b, c_out, t_in, out_f]);
            for (a, e) in g.value(y).iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12, "out_f {out_f}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn conv1d_impulse_reveals_dilated_taps() {
        // unit impulse at t=4 through a k=3 d=2 kernel shows taps at t=4,6,8
        let mut g: Graph<f64> = Graph::new();
        let mut imp = vec![0.0; 12];
        imp[4] = 1.0;
        let x = g.leaf(Tensor::from_vec(&[1, 1, 12], imp).unwrap());
        let w = g.constant(Tensor::from_vec(&[1, 1, 3], vec![0.25, 0.5, 1.0]).unwrap());
        let y = g.conv1d_dilated_causal(x, w, None, 2).unwrap();
        let v = g.value(y);
        assert_eq!(v[4], 1.0); // newest tap
        assert_eq!(v[6], 0.5);
        assert_eq!(v[8], 0.25); // oldest tap
        let hit: f64 = v.iter().sum();
        assert!((hit - 1.75).abs() < 1e-15);
        for (t, &val) in v.iter().enumerate() {
            if ![4, 6, 8].contains(&t) {
                assert_eq!(val, 0.0, "unexpected response at t={t}");
            }
        }
    }

    #[test]
    fn conv1d_matches_naive_reference() {
        let (n_b, c_in, c_out, t_in, k, d) = (2usize, 3usize, 2usize, 10usize, 3usize, 4usize);
        let xt = rand_tensor(&[n_b, c_in, t_in], 51);
        let wt = rand_tensor(&[c_out, c_in, k], 52);
        let bt = rand_tensor(&[c_out], 53);
        let mut expect = vec![0.0; n_b * c_out * t_in];
        for n in 0..n_b {
            for co in 0..c_out {
                for t in 0..t_in {
                    let mut acc = bt.data()[co];
                    for ci in 0..c_in {
                        for kk in 0..k {
                            // tap kk looks back (k-1-kk)*d frames
                            let back = (k - 1 - kk) * d;
                            if t >= back {
                                acc += xt.data()[(n * c_in + ci) * t_in + t - back]
                                    * wt.data()[(co * c_in + ci) * k + kk];
                            }
                        }
                    }
                    expect[(n * c_out + co) * t_in + t] = acc;
                }
            }
        }
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(xt);
        let w = g.leaf(wt);
        let b = g.leaf(bt);
        let y = g.conv1d_dilated_causal(x, w, Some(b), d).unwrap();
        for (a, e) in g.value(y).iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn norms_have_unit_moments_and_affine() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(rand_tensor(&[2, 3, 4, 5], 61));
        let gamma = g.leaf(Tensor::from_vec(&[3], vec![2.0, 1.0, 0.5]).unwrap());
        let beta = g.leaf(Tensor::from_vec(&[3], vec![-1.0, 0.0, 3.0]).unwrap());
        let y = g.instance_norm(x, gamma, beta, 1e-12).unwrap();
        // per (n, c): mean == beta[c], std == gamma[c]
        let v = g.value(y);
        for n in 0..2 {
            for c in 0..3 {
                let seg = &v[(n * 3 + c) * 20..(n * 3 + c + 1) * 20];
                let mu: f64 = seg.iter().sum::<f64>() / 20.0;
                let var: f64 = seg.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / 20.0;
                let (gc, bc) = ([2.0, 1.0, 0.5][c], [-1.0, 0.0, 3.0][c]);
                assert!((mu - bc).abs() < 1e-9);
                assert!((var.sqrt() - gc).abs() < 1e-6);
            }
        }
        // constant input normalizes to ~0, output is beta
        let xc = g.leaf(Tensor::full(&[1, 3, 2, 2], 5.0));
        let yc = g.instance_norm(xc, gamma, beta, 1e-5).unwrap();
        for c in 0..3 {
            for i in 0..4 {
                assert!((g.value(yc)[c * 4 + i] - [-1.0, 0.0, 3.0][c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn frame_norm2d_is_per_frame() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(rand_tensor(&[1, 2, 3, 8], 62));
        let gamma = g.leaf(Tensor::full(&[2], 1.0));
        let beta = g.leaf(Tensor::full(&[2], 0.0));
        let y = g.frame_norm2d(x, gamma, beta, 1e-12).unwrap();
        let v = g.value(y);
        for c in 0..2 {
            for t in 0..3 {
                let seg = &v[(c * 3 + t) * 8..(c * 3 + t + 1) * 8];
                let mu: f64 = seg.iter().sum::<f64>() / 8.0;
                assert!(mu.abs() < 1e-9, "frame ({c},{t}) mean {mu}");
            }
        }
    }

    #[test]
    fn frame_norm1d_normalizes_over_channels() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(rand_tensor(&[1, 6, 5], 63));
        let gamma = g.leaf(Tensor::full(&[6], 1.0));
        let beta = g.leaf(Tensor::full(&[6], 0.0));
        let y = g.frame_norm1d(x, gamma, beta, 1e-12).unwrap();
        let v = g.value(y);
        for t in 0..5 {
            let mut mu = 0.0;
            let mut var = 0.0;
            for c in 0..6 {
                mu += v[c * 5 + t];
            }
            mu /= 6.0;
            for c in 0..6 {
                var += (v[c * 5 + t] - mu) * (v[c * 5 + t] - mu);
            }
            var /= 6.0;
            assert!(mu.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(rand_tensor(&[4], 70));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn backward_is_deterministic() {
        let xt = rand_tensor(&[2, 2, 6], 71);
        let wt = rand_tensor(&[2, 2, 3], 72);
        let run = || {
            let mut g: Graph<f64> = Graph::new();
            let x = g.leaf(xt.clone());
            let w = g.leaf(wt.clone());
            let y = g.conv1d_dilated_causal(x, w, None, 2).unwrap();
            let s = g.sigmoid(y);
            let loss = g.mean(s);
            let grads = g.backward(loss).unwrap();
            (grads[x].clone(), grads[w].clone())
        };
        assert_eq!(run(), run());
    }

    // gradient checks against central differences, one per op family

    #[test]
    fn gradcheck_pointwise_and_reductions() {
        let inputs = [rand_tensor(&[7], 81), rand_tensor(&[7], 82)];
        let r = grad_check(
            |g, ids| {
                let s = g.sigmoid(ids[0]);
                let m = g.mul(s, ids[1]).unwrap();
                let h = g.hypot(m, ids[0]).unwrap();
                let a = g.add(h, ids[1]).unwrap();
                let d = g.sub(a, ids[0]).unwrap();
                let sc = g.scale(d, 0.7);
                g.mean(sc)
            },
            &inputs,
            1e-6,
        );
        assert!(r.passed(), "max rel err {}", r.max_rel_err);
    }

    #[test]
    fn gradcheck_prelu_and_structure() {
        let inputs = [rand_tensor(&[2, 3, 4, 4], 83), Tensor::from_vec(&[1], vec![0.25]).unwrap()];
        let r = grad_check(
            |g, ids| {
                let p = g.prelu(ids[0], ids[1]).unwrap();
                let t = g.transpose23(p).unwrap();
                let s = g.slice_axis(t, 3, 1, 2).unwrap();
                let r = g.reshape(s, &[2, 3, 8]).unwrap();
                let c = g.concat(&[r, r], 1).unwrap();
                g.sum(c)
            },
            &inputs,
            1e-6,
        );
        assert!(r.passed(), "max rel err {}", r.max_rel_err);
    }

    #[test]
    fn gradcheck_conv2d() {
        let inputs = [
            rand_tensor(&[1, 2, 4, 7], 84),
            rand_tensor(&[3, 2, 2, 3], 85),
            rand_tensor(&[3], 86),
        ];
        let r = grad_check(
            |g, ids| {
                let y = g.conv2d(ids[0], ids[1], Some(ids[2]), 2, 1, (1, 0)).unwrap();
                let s = g.sigmoid(y);
                g.mean(s)
            },
            &inputs,
            1e-6,
        );
        assert!(r.passed(), "max rel err {}", r.max_rel_err);
    }

    #[test]
    fn gradcheck_conv_transpose2d() {
        let inputs = [
            rand_tensor(&[1, 3, 3, 4], 87),
            rand_tensor(&[3, 2, 2, 3], 88),
            rand_tensor(&[2], 89),
        ];
        let r = grad_check(
            |g, ids| {
                let y = g.conv_transpose2d(ids[0], ids[1], Some(ids[2]), 2, 7).unwrap();
                let s = g.sigmoid(y);
                g.mean(s)
            },
            &inputs,
            1e-6,
        );
        assert!(r.passed(), "max rel err {}", r.max_rel_err);
    }

    #[test]
    fn gradcheck_conv1d() {
        let inputs = [rand_tensor(&[2, 2, 9], 90), rand_tensor(&[3, 2, 3], 91), rand_tensor(&[3], 92)];
        let r = grad_check(
            |g, ids| {
                let y = g.conv1d_dilated_causal(ids[0], ids[1], Some(ids[2]), 3).unwrap();
                let s = g.sigmoid(y);
                g.mean(s)
            },
            &inputs,
            1e-6,
        );
        assert!(r.passed(), "max rel err {}", r.max_rel_err);
    }

    #[test]
    fn gradcheck_norms() {
        let inputs = [
            rand_tensor(&[1, 2, 3, 4], 93),
            Tensor::from_vec(&[2], vec![1.3, 0.7]).unwrap(),
            Tensor::from_vec(&[2], vec![0.1, -0.2]).unwrap(),
        ];
        for which in 0..2 {
            let r = grad_check(
                |g, ids| {
                    let y = if which == 0 {
                        g.instance_norm(ids[0], ids[1], ids[2], 1e-5).unwrap()
                    } else {
                        g.frame_norm2d(ids[0], ids[1], ids[2], 1e-5).unwrap()
                    };
                    let s = g.sigmoid(y);
                    g.mean(s)
                },
                &inputs,
                1e-5,
            );
            assert!(r.passed(), "norm {which}: max rel err {}", r.max_rel_err);
        }
        let inputs1 = [
            rand_tensor(&[2, 4, 5], 94),
            Tensor::from_vec(&[4], vec![1.0, 0.5, 2.0, 0.8]).unwrap(),
            Tensor::from_vec(&[4], vec![0.0, 0.3, -0.1, 0.2]).unwrap(),
        ];
        let r = grad_check(
            |g, ids| {
                let y = g.frame_norm1d(ids[0], ids[1], ids[2], 1e-5).unwrap();
                let s = g.sigmoid(y);
                g.mean(s)
            },
            &inputs1,
            1e-5,
        );
        assert!(r.passed(), "frame_norm1d: max rel err {}", r.max_rel_err);
    }
}
