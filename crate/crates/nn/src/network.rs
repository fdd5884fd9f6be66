use std::cell::Cell;

use rand::Rng;

use crate::error::{NnError, Result};
use crate::spec::{Activation, LayerSpec, NetworkSpec};
use crate::tensor::Tensor;

thread_local! {
    static FORWARD_MACS: Cell<u64> = const { Cell::new(0) };
    static BACKWARD_MACS: Cell<u64> = const { Cell::new(0) };
}

/// Per-thread multiply-accumulate counters fed by every forward and backward pass.
pub mod instrumentation {
    use super::{BACKWARD_MACS, FORWARD_MACS};

    #[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
    pub struct MacCounts {
        pub forward: u64,
        pub backward: u64,
    }

    pub fn reset() {
        FORWARD_MACS.with(|c| c.set(0));
        BACKWARD_MACS.with(|c| c.set(0));
    }

    pub fn snapshot() -> MacCounts {
        MacCounts {
            forward: FORWARD_MACS.with(|c| c.get()),
            backward: BACKWARD_MACS.with(|c| c.get()),
        }
    }
}

/// Intermediates recorded by [`Network::forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    batch: usize,
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Dense { x: Vec<f64>, y: Vec<f64> },
    Residual { x: Vec<f64>, h: Vec<f64>, y: Vec<f64> },
    Hierarchical { x: Vec<f64>, y: Vec<f64> },
    Conv { x: Vec<f64>, y: Vec<f64> },
    Pool { argmax: Vec<usize>, input_len: usize },
    Flatten,
}

/// A feed-forward network: a validated spec plus its parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<Tensor>,
}

impl Network {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Self {
        let mut params = Vec::new();
        for layer in spec.layers() {
            for (k, shape) in layer.param_shapes().into_iter().enumerate() {
                let mut t = Tensor::zeros(&shape);
                let is_weight = k % 2 == 0;
                if is_weight {
                    let (fan_in, fan_out) = fans(layer);
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for v in t.data_mut() {
                        *v = rng.gen_range(-limit..=limit);
                    }
                }
                params.push(t);
            }
        }
        Self { spec, params }
    }

    /// Multiplies the weights of the last parametric layer by `factor`.
    pub fn scale_output_weights(&mut self, factor: f64) {
        let Some(last) = self.spec.layers().iter().rposition(|l| !l.param_shapes().is_empty()) else {
            return;
        };
        let first_param: usize = self.spec.layers()[..last].iter().map(|l| l.param_shapes().len()).sum();
        self.params[first_param].data_mut().iter_mut().for_each(|w| *w *= factor);
    }

    pub fn from_flat(spec: NetworkSpec, flat: &[f64]) -> Result<Self> {
        let mut params: Vec<Tensor> = spec
            .layers()
            .iter()
            .flat_map(|l| l.param_shapes())
            .map(|s| Tensor::zeros(&s))
            .collect();
        if flat.len() != spec.param_count() {
            return Err(NnError::ShapeMismatch {
                context: "flat parameter vector",
                expected: vec![spec.param_count()],
                actual: vec![flat.len()],
            });
        }
        let mut offset = 0;
        for p in &mut params {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.grad().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(NnError::ShapeMismatch {
                context: "flat parameter vector",
                expected: vec![self.param_count()],
                actual: vec![flat.len()],
            });
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.iter().map(Tensor::grad_norm_sq).sum::<f64>().sqrt()
    }

    /// Forward pass without retaining intermediates.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.run(input, false).map(|(out, _)| out)
    }

    /// Forward pass that also returns the cache needed by [`Network::backward`].
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.run(input, true)
    }

    fn run(&self, input: &Tensor, keep: bool) -> Result<(Tensor, ForwardCache)> {
        let batch = self.check_input(input)?;
        let mut x = input.data().to_vec();
        let mut caches = Vec::with_capacity(if keep { self.spec.layers().len() } else { 0 });
        let mut p = 0;
        for (index, layer) in self.spec.layers().iter().enumerate() {
            let in_shape = self.spec.shape_at(index);
            let (y, cache) = match layer {
                LayerSpec::Dense {
                    inputs,
                    outputs,
                    activation,
                } => {
                    let y = dense_forward(
                        &x,
                        batch,
                        *inputs,
                        *outputs,
                        self.params[p].data(),
                        self.params[p + 1].data(),
                        *activation,
                    );
                    p += 2;
                    let cache = keep.then(|| LayerCache::Dense {
                        x: std::mem::take(&mut x),
                        y: y.clone(),
                    });
                    (y, cache)
                }
                LayerSpec::Residual { width } => {
                    let w = *width;
                    let h = dense_forward(
                        &x,
                        batch,
                        w,
                        w,
                        self.params[p].data(),
                        self.params[p + 1].data(),
                        Activation::Relu,
                    );
                    let mut y = dense_forward(
                        &h,
                        batch,
                        w,
                        w,
                        self.params[p + 2].data(),
                        self.params[p + 3].data(),
                        Activation::Identity,
                    );
                    for (yv, xv) in y.iter_mut().zip(&x) {
                        *yv = (*yv + xv).max(0.0);
                    }
                    p += 4;
                    let cache = keep.then(|| LayerCache::Residual {
                        x: std::mem::take(&mut x),
                        h,
                        y: y.clone(),
                    });
                    (y, cache)
                }
                LayerSpec::Hierarchical {
                    groups,
                    blocks,
                    outputs_per_group,
                    activation,
                } => {
                    let y = hierarchical_forward(
                        &x,
                        batch,
                        *groups,
                        blocks,
                        *outputs_per_group,
                        self.params[p].data(),
                        self.params[p + 1].data(),
                        *activation,
                    );
                    p += 2;
                    let cache = keep.then(|| LayerCache::Hierarchical {
                        x: std::mem::take(&mut x),
                        y: y.clone(),
                    });
                    (y, cache)
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    activation,
                } => {
                    let geom = ConvGeometry {
                        batch,
                        in_channels: *in_channels,
                        out_channels: *out_channels,
                        kernel: *kernel,
                        height: in_shape[1],
                        width: in_shape[2],
                    };
                    let y = conv_forward(
                        &x,
                        &geom,
                        self.params[p].data(),
                        self.params[p + 1].data(),
                        *activation,
                    );
                    p += 2;
                    let cache = keep.then(|| LayerCache::Conv {
                        x: std::mem::take(&mut x),
                        y: y.clone(),
                    });
                    (y, cache)
                }
                LayerSpec::MaxPool2d { window } => {
                    let (y, argmax) = pool_forward(&x, batch, in_shape, *window);
                    let cache = keep.then(|| LayerCache::Pool {
                        argmax,
                        input_len: x.len(),
                    });
                    (y, cache)
                }
                LayerSpec::Flatten => (std::mem::take(&mut x), keep.then_some(LayerCache::Flatten)),
            };
            if let Some(c) = cache {
                caches.push(c);
            }
            x = y;
        }
        let macs = self.spec.count_macs() * batch as u64;
        FORWARD_MACS.with(|c| c.set(c.get() + macs));

        let mut out_shape = vec![batch];
        out_shape.extend_from_slice(self.spec.output_shape());
        let out = Tensor::from_vec(&out_shape, x)?;
        out.check_finite("forward activation")?;
        Ok((
            out,
            ForwardCache {
                fingerprint: self.spec.fingerprint(),
                batch,
                layers: caches,
            },
        ))
    }

    /// Reverse-mode pass: accumulates parameter gradients (into each
    /// parameter tensor's grad buffer) and returns the gradient with respect
    /// to the input.
    pub fn backward(&mut self, cache: &ForwardCache, upstream: &Tensor) -> Result<Tensor> {
        if cache.layers.len() != self.spec.layers().len()
            || cache.fingerprint != self.spec.fingerprint()
        {
            return Err(NnError::MissingCache);
        }
        let batch = cache.batch;
        let mut expected = vec![batch];
        expected.extend_from_slice(self.spec.output_shape());
        if upstream.shape() != expected.as_slice() {
            return Err(NnError::ShapeMismatch {
                context: "backward upstream gradient",
                expected,
                actual: upstream.shape().to_vec(),
            });
        }
        upstream.check_finite("upstream gradient")?;

        let mut dy = upstream.data().to_vec();
        let mut p = self.params.len();
        for (index, layer) in self.spec.layers().iter().enumerate().rev() {
            let in_shape = self.spec.shape_at(index).to_vec();
            let lc = &cache.layers[index];
            dy = match (layer, lc) {
                (
                    LayerSpec::Dense {
                        inputs,
                        outputs,
                        activation,
                    },
                    LayerCache::Dense { x, y },
                ) => {
                    p -= 2;
                    let (w, rest) = self.params[p..].split_at_mut(1);
                    dense_backward(
                        x,
                        y,
                        &dy,
                        batch,
                        *inputs,
                        *outputs,
                        &mut w[0],
                        &mut rest[0],
                        *activation,
                    )
                }
                (LayerSpec::Residual { width }, LayerCache::Residual { x, h, y }) => {
                    p -= 4;
                    let w = *width;
                    let mut dz = dy;
                    for (d, yv) in dz.iter_mut().zip(y) {
                        if *yv <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    let (first, second) = self.params[p..p + 4].split_at_mut(2);
                    let (w2, b2) = second.split_at_mut(1);
                    let dh = dense_backward_linear(&h[..], &dz, batch, w, w, &mut w2[0], &mut b2[0]);
                    let (w1, b1) = first.split_at_mut(1);
                    let dx1 = dense_backward(x, h, &dh, batch, w, w, &mut w1[0], &mut b1[0], Activation::Relu);
                    dz.iter_mut().zip(dx1).for_each(|(a, b)| *a += b);
                    dz
                }
                (
                    LayerSpec::Hierarchical {
                        groups,
                        blocks,
                        outputs_per_group,
                        activation,
                    },
                    LayerCache::Hierarchical { x, y },
                ) => {
                    p -= 2;
                    let (w, rest) = self.params[p..].split_at_mut(1);
                    hierarchical_backward(
                        x,
                        y,
                        &dy,
                        batch,
                        *groups,
                        blocks,
                        *outputs_per_group,
                        &mut w[0],
                        &mut rest[0],
                        *activation,
                    )
                }
                (
                    LayerSpec::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        activation,
                    },
                    LayerCache::Conv { x, y },
                ) => {
                    p -= 2;
                    let geom = ConvGeometry {
                        batch,
                        in_channels: *in_channels,
                        out_channels: *out_channels,
                        kernel: *kernel,
                        height: in_shape[1],
                        width: in_shape[2],
                    };
                    let (w, rest) = self.params[p..].split_at_mut(1);
                    conv_backward(x, y, &dy, &geom, &mut w[0], &mut rest[0], *activation)
                }
                (LayerSpec::MaxPool2d { .. }, LayerCache::Pool { argmax, input_len }) => {
                    let mut dx = vec![0.0; *input_len];
                    for (g, &src) in dy.iter().zip(argmax) {
                        dx[src] += g;
                    }
                    dx
                }
                (LayerSpec::Flatten, LayerCache::Flatten) => dy,
                _ => return Err(NnError::MissingCache),
            };
        }
        let macs = 2 * self.spec.count_macs() * batch as u64;
        BACKWARD_MACS.with(|c| c.set(c.get() + macs));

        if self.params.iter().any(|t| t.grad().iter().any(|g| !g.is_finite())) {
            return Err(NnError::NonFinite("parameter gradient"));
        }
        let mut in_shape = vec![batch];
        in_shape.extend_from_slice(self.spec.input_shape());
        let dx = Tensor::from_vec(&in_shape, dy)?;
        dx.check_finite("input gradient")?;
        Ok(dx)
    }

    fn check_input(&self, input: &Tensor) -> Result<usize> {
        let shape = input.shape();
        if shape.len() != self.spec.input_shape().len() + 1 || &shape[1..] != self.spec.input_shape()
        {
            let mut expected = vec![shape.first().copied().unwrap_or(0)];
            expected.extend_from_slice(self.spec.input_shape());
            return Err(NnError::ShapeMismatch {
                context: "network input",
                expected,
                actual: shape.to_vec(),
            });
        }
        input.check_finite("network input")?;
        Ok(shape[0])
    }
}

/// `target <- tau * online + (1 - tau) * target`, parameter by parameter.
pub fn soft_update(target: &mut Network, online: &Network, tau: f64) -> Result<()> {
    if target.spec.fingerprint() != online.spec.fingerprint() {
        return Err(NnError::InvalidSpec(
            "soft update between different architectures".into(),
        ));
    }
    for (t, o) in target.params.iter_mut().zip(&online.params) {
        for (tv, ov) in t.data_mut().iter_mut().zip(o.data()) {
            *tv = tau * ov + (1.0 - tau) * *tv;
        }
    }
    Ok(())
}

fn fans(layer: &LayerSpec) -> (usize, usize) {
    match layer {
        LayerSpec::Dense {
            inputs, outputs, ..
        } => (*inputs, *outputs),
        LayerSpec::Residual { width } => (*width, *width),
        LayerSpec::Hierarchical {
            blocks,
            outputs_per_group,
            ..
        } => (blocks.iter().sum(), *outputs_per_group),
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            ..
        } => (in_channels * kernel * kernel, out_channels * kernel * kernel),
        LayerSpec::MaxPool2d { .. } | LayerSpec::Flatten => (1, 1),
    }
}

/// `c = a * b + beta * c` for strided row/column-major operands.
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
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    // SAFETY: operand extents are checked above against the strides.
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
            rsc as isize,
            csc as isize,
        );
    }
}

fn dense_forward(
    x: &[f64],
    batch: usize,
    inputs: usize,
    outputs: usize,
    w: &[f64],
    b: &[f64],
    activation: Activation,
) -> Vec<f64> {
    let mut y = vec![0.0; batch * outputs];
    // y[B, out] = x[B, in] * W^T, W stored [out, in]
    gemm(batch, inputs, outputs, x, (inputs, 1), w, (1, inputs), 0.0, &mut y, (outputs, 1));
    for row in y.chunks_mut(outputs.max(1)) {
        for (v, bias) in row.iter_mut().zip(b) {
            *v = activation.apply(*v + bias);
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    x: &[f64],
    y: &[f64],
    dy: &[f64],
    batch: usize,
    inputs: usize,
    outputs: usize,
    w: &mut Tensor,
    b: &mut Tensor,
    activation: Activation,
) -> Vec<f64> {
    let dz: Vec<f64> = if activation == Activation::Identity {
        dy.to_vec()
    } else {
        dy.iter()
            .zip(y)
            .map(|(g, yv)| g * activation.derivative_from_output(*yv))
            .collect()
    };
    dense_backward_linear(x, &dz, batch, inputs, outputs, w, b)
}

fn dense_backward_linear(
    x: &[f64],
    dz: &[f64],
    batch: usize,
    inputs: usize,
    outputs: usize,
    w: &mut Tensor,
    b: &mut Tensor,
) -> Vec<f64> {
    // dW[out, in] += dz^T[out, B] * x[B, in]
    gemm(outputs, batch, inputs, dz, (1, outputs), x, (inputs, 1), 1.0, w.grad_mut(), (inputs, 1));
    let db = b.grad_mut();
    for row in dz.chunks(outputs.max(1)) {
        for (acc, g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    // dx[B, in] = dz[B, out] * W[out, in]
    let mut dx = vec![0.0; batch * inputs];
    gemm(batch, outputs, inputs, dz, (outputs, 1), w.data(), (inputs, 1), 0.0, &mut dx, (inputs, 1));
    dx
}

/// Column indices (within one input row) owned by each group.
fn group_indices(groups: usize, blocks: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); groups];
    let mut base = 0;
    for &width in blocks {
        for (g, idx) in out.iter_mut().enumerate() {
            idx.extend(base + g * width..base + (g + 1) * width);
        }
        base += groups * width;
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn hierarchical_forward(
    x: &[f64],
    batch: usize,
    groups: usize,
    blocks: &[usize],
    out_g: usize,
    w: &[f64],
    b: &[f64],
    activation: Activation,
) -> Vec<f64> {
    let in_g: usize = blocks.iter().sum();
    let row_in = groups * in_g;
    let row_out = groups * out_g;
    let index = group_indices(groups, blocks);
    let mut y = vec![0.0; batch * row_out];
    let mut xg = vec![0.0; batch * in_g];
    for (g, cols) in index.iter().enumerate() {
        for r in 0..batch {
            for (k, &c) in cols.iter().enumerate() {
                xg[r * in_g + k] = x[r * row_in + c];
            }
        }
        let yg = dense_forward(
            &xg,
            batch,
            in_g,
            out_g,
            &w[g * out_g * in_g..(g + 1) * out_g * in_g],
            &b[g * out_g..(g + 1) * out_g],
            activation,
        );
        for r in 0..batch {
            y[r * row_out + g * out_g..r * row_out + (g + 1) * out_g]
                .copy_from_slice(&yg[r * out_g..(r + 1) * out_g]);
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn hierarchical_backward(
    x: &[f64],
    y: &[f64],
    dy: &[f64],
    batch: usize,
    groups: usize,
    blocks: &[usize],
    out_g: usize,
    w: &mut Tensor,
    b: &mut Tensor,
    activation: Activation,
) -> Vec<f64> {
    let in_g: usize = blocks.iter().sum();
    let row_in = groups * in_g;
    let row_out = groups * out_g;
    let index = group_indices(groups, blocks);
    let mut dx = vec![0.0; batch * row_in];
    let mut xg = vec![0.0; batch * in_g];
    let mut dzg = vec![0.0; batch * out_g];
    for (g, cols) in index.iter().enumerate() {
        for r in 0..batch {
            for (k, &c) in cols.iter().enumerate() {
                xg[r * in_g + k] = x[r * row_in + c];
            }
            for k in 0..out_g {
                let at = r * row_out + g * out_g + k;
                dzg[r * out_g + k] = dy[at] * activation.derivative_from_output(y[at]);
            }
        }
        let wg = &w.data()[g * out_g * in_g..(g + 1) * out_g * in_g];
        let mut dxg = vec![0.0; batch * in_g];
        gemm(batch, out_g, in_g, &dzg, (out_g, 1), wg, (in_g, 1), 0.0, &mut dxg, (in_g, 1));
        let dwg = &mut w.grad_mut()[g * out_g * in_g..(g + 1) * out_g * in_g];
        gemm(out_g, batch, in_g, &dzg, (1, out_g), &xg, (in_g, 1), 1.0, dwg, (in_g, 1));
        let dbg = &mut b.grad_mut()[g * out_g..(g + 1) * out_g];
        for row in dzg.chunks(out_g.max(1)) {
            for (acc, v) in dbg.iter_mut().zip(row) {
                *acc += v;
            }
        }
        for r in 0..batch {
            for (k, &c) in cols.iter().enumerate() {
                dx[r * row_in + c] += dxg[r * in_g + k];
            }
        }
    }
    dx
}

struct ConvGeometry {
    batch: usize,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    height: usize,
    width: usize,
}

impl ConvGeometry {
    fn out_h(&self) -> usize {
        self.height + 1 - self.kernel
    }
    fn out_w(&self) -> usize {
        self.width + 1 - self.kernel
    }
}

/// Patch matrix of one sample: row `(ci, ky, kx)`, column `(oy, ox)`.
fn im2col(xs: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (oh, ow, k) = (g.out_h(), g.out_w(), g.kernel);
    let in_plane = g.height * g.width;
    let mut cols = Vec::with_capacity(g.in_channels * k * k * oh * ow);
    for ci in 0..g.in_channels {
        let plane = &xs[ci * in_plane..(ci + 1) * in_plane];
        for ky in 0..k {
            for kx in 0..k {
                for oy in 0..oh {
                    let start = (oy + ky) * g.width + kx;
                    cols.extend_from_slice(&plane[start..start + ow]);
                }
            }
        }
    }
    cols
}

fn conv_forward(
    x: &[f64],
    g: &ConvGeometry,
    kernel: &[f64],
    bias: &[f64],
    activation: Activation,
) -> Vec<f64> {
    let patch = g.in_channels * g.kernel * g.kernel;
    let in_len = g.in_channels * g.height * g.width;
    let out_plane = g.out_h() * g.out_w();
    let out_len = g.out_channels * out_plane;
    let mut y = vec![0.0; g.batch * out_len];
    for n in 0..g.batch {
        let cols = im2col(&x[n * in_len..(n + 1) * in_len], g);
        let out = &mut y[n * out_len..(n + 1) * out_len];
        for (co, row) in out.chunks_mut(out_plane).enumerate() {
            row.iter_mut().for_each(|v| *v = bias[co]);
        }
        gemm(
            g.out_channels,
            patch,
            out_plane,
            kernel,
            (patch, 1),
            &cols,
            (out_plane, 1),
            1.0,
            out,
            (out_plane, 1),
        );
        out.iter_mut().for_each(|v| *v = activation.apply(*v));
    }
    y
}

fn conv_backward(
    x: &[f64],
    y: &[f64],
    dy: &[f64],
    g: &ConvGeometry,
    kernel: &mut Tensor,
    bias: &mut Tensor,
    activation: Activation,
) -> Vec<f64> {
    let (oh, ow, k) = (g.out_h(), g.out_w(), g.kernel);
    let patch = g.in_channels * k * k;
    let in_plane = g.height * g.width;
    let in_len = g.in_channels * in_plane;
    let out_plane = oh * ow;
    let out_len = g.out_channels * out_plane;
    let dz: Vec<f64> = dy
        .iter()
        .zip(y)
        .map(|(d, yv)| d * activation.derivative_from_output(*yv))
        .collect();
    let mut dx = vec![0.0; x.len()];
    let mut dcols = vec![0.0; patch * out_plane];
    for n in 0..g.batch {
        let cols = im2col(&x[n * in_len..(n + 1) * in_len], g);
        let dzn = &dz[n * out_len..(n + 1) * out_len];
        for (co, row) in dzn.chunks(out_plane).enumerate() {
            bias.grad_mut()[co] += row.iter().sum::<f64>();
        }
        // dK += dz_n * cols^T
        gemm(
            g.out_channels,
            out_plane,
            patch,
            dzn,
            (out_plane, 1),
            &cols,
            (1, out_plane),
            1.0,
            kernel.grad_mut(),
            (patch, 1),
        );
        // dcols = K^T * dz_n
        gemm(
            patch,
            g.out_channels,
            out_plane,
            kernel.data(),
            (1, patch),
            dzn,
            (out_plane, 1),
            0.0,
            &mut dcols,
            (out_plane, 1),
        );
        let dxn = &mut dx[n * in_len..(n + 1) * in_len];
        let mut r = 0;
        for ci in 0..g.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    for oy in 0..oh {
                        let start = ci * in_plane + (oy + ky) * g.width + kx;
                        let src = &dcols[r * out_plane + oy * ow..r * out_plane + (oy + 1) * ow];
                        dxn[start..start + ow].iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                    r += 1;
                }
            }
        }
    }
    dx
}

fn pool_forward(x: &[f64], batch: usize, in_shape: &[usize], window: usize) -> (Vec<f64>, Vec<usize>) {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (h / window, w / window);
    let mut y = Vec::with_capacity(batch * c * oh * ow);
    let mut argmax = Vec::with_capacity(batch * c * oh * ow);
    for plane in 0..batch * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * window * w + ox * window;
                for dy in 0..window {
                    for dx in 0..window {
                        let i = base + (oy * window + dy) * w + ox * window + dx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                y.push(x[best]);
                argmax.push(best);
            }
        }
    }
    (y, argmax)
}
