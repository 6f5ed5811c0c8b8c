use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::gemm::{gemm, View};
use super::params::ParamVector;
use super::spec::{layer_param_count, ActShape, Layer, NetworkSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct Step {
    layer: Layer,
    input: ActShape,
    output: ActShape,
    offset: usize,
}

/// A feed-forward network whose weights live in one flat [`ParamVector`].
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    params: ParamVector,
    seed: u64,
    steps: Vec<Step>,
}

impl Network {
    /// Glorot-uniform weights, zero biases, fully determined by `seed`.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Network> {
        let steps = plan(&spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0f32; spec.param_count()];
        for step in &steps {
            let (fan_in, fan_out, weights) = match step.layer {
                Layer::Conv2d { in_ch, out_ch, kernel_h, kernel_w, .. } => {
                    let area = kernel_h * kernel_w;
                    (in_ch * area, out_ch * area, out_ch * in_ch * area)
                }
                Layer::Dense { in_dim, out_dim } => (in_dim, out_dim, in_dim * out_dim),
                _ => continue,
            };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
            let dist = Uniform::new_inclusive(-bound, bound)
                .map_err(|e| Error::Spec(format!("init bound: {e}")))?;
            for w in &mut params[step.offset..step.offset + weights] {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(Network {
            spec,
            params: ParamVector::new(params),
            seed,
            steps,
        })
    }

    pub fn from_params(spec: NetworkSpec, params: ParamVector) -> Result<Network> {
        let steps = plan(&spec)?;
        if params.len() != spec.param_count() {
            return Err(Error::dim(format!(
                "spec has {} parameters, vector has {}",
                spec.param_count(),
                params.len()
            )));
        }
        Ok(Network { spec, params, seed: 0, steps })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Replaces all weights; the length must match the spec.
    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::dim(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let [c, h, w] = self.spec.input;
        let shape = batch.shape();
        let ok = match shape.len() {
            4 => shape[1..] == [c, h, w],
            2 => shape[1] == c * h * w,
            _ => false,
        };
        if !ok {
            return Err(Error::dim(format!(
                "batch shape {shape:?} does not match network input {:?}",
                self.spec.input
            )));
        }
        Ok(shape[0])
    }

    /// Logits of shape `[batch, num_classes]`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let n = self.check_batch(batch)?;
        let mut x = batch.data().to_vec();
        for step in &self.steps {
            x = self.layer_forward(step, &x, n);
        }
        Tensor::new(vec![n, self.spec.num_classes], x)
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss(&self, batch: &Tensor, labels: &[usize]) -> Result<f32> {
        let logits = self.forward(batch)?;
        let (loss, _) = cross_entropy(&logits, labels, false)?;
        Ok(loss)
    }

    /// Mean cross-entropy and its exact gradient with respect to every
    /// parameter, in the same layout as [`Network::params`].
    pub fn loss_and_grad(&self, batch: &Tensor, labels: &[usize]) -> Result<(f32, ParamVector)> {
        let n = self.check_batch(batch)?;
        let mut acts: Vec<Vec<f32>> = Vec::with_capacity(self.steps.len() + 1);
        acts.push(batch.data().to_vec());
        for step in &self.steps {
            let next = self.layer_forward(step, acts.last().unwrap(), n);
            acts.push(next);
        }
        let logits = Tensor::new(vec![n, self.spec.num_classes], acts.pop().unwrap())?;
        let (loss, dlogits) = cross_entropy(&logits, labels, true)?;

        let mut grad = vec![0.0f32; self.params.len()];
        let mut delta = dlogits;
        for (i, step) in self.steps.iter().enumerate().rev() {
            let need_input_grad = i > 0;
            delta = self.layer_backward(step, &acts[i], &delta, n, &mut grad, need_input_grad);
        }
        Ok((loss, ParamVector::new(grad)))
    }

    fn layer_forward(&self, step: &Step, x: &[f32], n: usize) -> Vec<f32> {
        let p = self.params.as_slice();
        match (step.layer, step.input, step.output) {
            (Layer::Dense { in_dim, out_dim }, _, _) => {
                let w = &p[step.offset..step.offset + in_dim * out_dim];
                let b = &p[step.offset + in_dim * out_dim..step.offset + in_dim * out_dim + out_dim];
                let mut y = vec![0.0f32; n * out_dim];
                gemm(
                    n,
                    in_dim,
                    out_dim,
                    View::row_major(x, in_dim),
                    View::transposed(w, in_dim),
                    0.0,
                    &mut y,
                );
                for row in y.chunks_mut(out_dim) {
                    for (v, bias) in row.iter_mut().zip(b) {
                        *v += bias;
                    }
                }
                y
            }
            (
                Layer::Conv2d { out_ch, kernel_h, kernel_w, stride, .. },
                ActShape::Image { c, h, w },
                ActShape::Image { h: oh, w: ow, .. },
            ) => {
                let k = c * kernel_h * kernel_w;
                let wts = &p[step.offset..step.offset + out_ch * k];
                let bias = &p[step.offset + out_ch * k..step.offset + out_ch * k + out_ch];
                let in_len = c * h * w;
                let out_len = out_ch * oh * ow;
                let geom = ConvGeom { c, h, w, kh: kernel_h, kw: kernel_w, stride, oh, ow };
                let mut cols = vec![0.0f32; k * oh * ow];
                let mut y = vec![0.0f32; n * out_len];
                for s in 0..n {
                    im2col(&x[s * in_len..(s + 1) * in_len], &geom, &mut cols);
                    let ys = &mut y[s * out_len..(s + 1) * out_len];
                    gemm(
                        out_ch,
                        k,
                        oh * ow,
                        View::row_major(wts, k),
                        View::row_major(&cols, oh * ow),
                        0.0,
                        ys,
                    );
                    for (row, b) in ys.chunks_mut(oh * ow).zip(bias) {
                        for v in row {
                            *v += b;
                        }
                    }
                }
                y
            }
            (Layer::MaxPool { k }, ActShape::Image { c, h, w }, ActShape::Image { h: oh, w: ow, .. }) => {
                let mut y = Vec::with_capacity(n * c * oh * ow);
                for s in 0..n {
                    for ch in 0..c {
                        let plane = &x[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let idx = pool_argmax(plane, w, k, oy, ox);
                                y.push(plane[idx]);
                            }
                        }
                    }
                }
                y
            }
            (Layer::Relu, _, _) => x.iter().map(|&v| v.max(0.0)).collect(),
            (Layer::Flatten, _, _) => x.to_vec(),
            _ => unreachable!("plan() validated layer/shape combinations"),
        }
    }

    /// Accumulates parameter gradients for `step` into `grad` and returns the
    /// gradient with respect to the layer input (empty when not requested).
    fn layer_backward(
        &self,
        step: &Step,
        x: &[f32],
        dy: &[f32],
        n: usize,
        grad: &mut [f32],
        need_input_grad: bool,
    ) -> Vec<f32> {
        let p = self.params.as_slice();
        match (step.layer, step.input, step.output) {
            (Layer::Dense { in_dim, out_dim }, _, _) => {
                let w_len = in_dim * out_dim;
                let (gw, gb) = grad[step.offset..step.offset + w_len + out_dim].split_at_mut(w_len);
                // dW = dY^T X
                gemm(
                    out_dim,
                    n,
                    in_dim,
                    View::transposed(dy, out_dim),
                    View::row_major(x, in_dim),
                    0.0,
                    gw,
                );
                for (j, g) in gb.iter_mut().enumerate() {
                    let mut acc = 0.0f64;
                    for s in 0..n {
                        acc += dy[s * out_dim + j] as f64;
                    }
                    *g = acc as f32;
                }
                if !need_input_grad {
                    return Vec::new();
                }
                let w = &p[step.offset..step.offset + w_len];
                let mut dx = vec![0.0f32; n * in_dim];
                gemm(
                    n,
                    out_dim,
                    in_dim,
                    View::row_major(dy, out_dim),
                    View::row_major(w, in_dim),
                    0.0,
                    &mut dx,
                );
                dx
            }
            (
                Layer::Conv2d { out_ch, kernel_h, kernel_w, stride, .. },
                ActShape::Image { c, h, w },
                ActShape::Image { h: oh, w: ow, .. },
            ) => {
                let k = c * kernel_h * kernel_w;
                let pix = oh * ow;
                let in_len = c * h * w;
                let out_len = out_ch * pix;
                let geom = ConvGeom { c, h, w, kh: kernel_h, kw: kernel_w, stride, oh, ow };
                let wts = &p[step.offset..step.offset + out_ch * k];
                let (gw, gb) = grad[step.offset..step.offset + out_ch * k + out_ch].split_at_mut(out_ch * k);
                let mut bias_acc = vec![0.0f64; out_ch];
                let mut cols = vec![0.0f32; k * pix];
                let mut dcols = vec![0.0f32; k * pix];
                let mut dx = if need_input_grad { vec![0.0f32; n * in_len] } else { Vec::new() };
                for s in 0..n {
                    let dys = &dy[s * out_len..(s + 1) * out_len];
                    im2col(&x[s * in_len..(s + 1) * in_len], &geom, &mut cols);
                    // dW += dY_s cols^T
                    gemm(
                        out_ch,
                        pix,
                        k,
                        View::row_major(dys, pix),
                        View::transposed(&cols, pix),
                        if s == 0 { 0.0 } else { 1.0 },
                        gw,
                    );
                    for (acc, row) in bias_acc.iter_mut().zip(dys.chunks(pix)) {
                        *acc += row.iter().map(|&v| v as f64).sum::<f64>();
                    }
                    if need_input_grad {
                        gemm(
                            k,
                            out_ch,
                            pix,
                            View::transposed(wts, k),
                            View::row_major(dys, pix),
                            0.0,
                            &mut dcols,
                        );
                        col2im_add(&dcols, &geom, &mut dx[s * in_len..(s + 1) * in_len]);
                    }
                }
                for (g, acc) in gb.iter_mut().zip(bias_acc) {
                    *g = acc as f32;
                }
                dx
            }
            (Layer::MaxPool { k }, ActShape::Image { c, h, w }, ActShape::Image { h: oh, w: ow, .. }) => {
                if !need_input_grad {
                    return Vec::new();
                }
                let mut dx = vec![0.0f32; x.len()];
                let mut o = 0;
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * h * w;
                        let plane = &x[base..base + h * w];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let idx = pool_argmax(plane, w, k, oy, ox);
                                dx[base + idx] += dy[o];
                                o += 1;
                            }
                        }
                    }
                }
                dx
            }
            (Layer::Relu, _, _) => {
                if !need_input_grad {
                    return Vec::new();
                }
                x.iter()
                    .zip(dy)
                    .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
                    .collect()
            }
            (Layer::Flatten, _, _) => {
                if need_input_grad {
                    dy.to_vec()
                } else {
                    Vec::new()
                }
            }
            _ => unreachable!("plan() validated layer/shape combinations"),
        }
    }
}

fn plan(spec: &NetworkSpec) -> Result<Vec<Step>> {
    let shapes = spec.shapes()?;
    let mut offset = 0;
    Ok(spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let step = Step {
                layer: *layer,
                input: shapes[i],
                output: shapes[i + 1],
                offset,
            };
            offset += layer_param_count(layer);
            step
        })
        .collect())
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let pix = g.oh * g.ow;
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * pix;
                for oy in 0..g.oh {
                    let src = ci * g.h * g.w + (oy * g.stride + ky) * g.w + kx;
                    let dst = row + oy * g.ow;
                    for ox in 0..g.ow {
                        cols[dst + ox] = x[src + ox * g.stride];
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let pix = g.oh * g.ow;
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * pix;
                for oy in 0..g.oh {
                    let dst = ci * g.h * g.w + (oy * g.stride + ky) * g.w + kx;
                    let src = row + oy * g.ow;
                    for ox in 0..g.ow {
                        dx[dst + ox * g.stride] += cols[src + ox];
                    }
                }
            }
        }
    }
}

/// Flat index (within `plane`) of the first maximum in pooling window `(oy, ox)`.
fn pool_argmax(plane: &[f32], w: usize, k: usize, oy: usize, ox: usize) -> usize {
    let mut best = oy * k * w + ox * k;
    for dy in 0..k {
        for dx in 0..k {
            let idx = (oy * k + dy) * w + ox * k + dx;
            if plane[idx] > plane[best] {
                best = idx;
            }
        }
    }
    best
}

/// Mean cross-entropy of `logits` against `labels`; optionally also the
/// gradient with respect to the logits.
fn cross_entropy(logits: &Tensor, labels: &[usize], want_grad: bool) -> Result<(f32, Vec<f32>)> {
    let n = logits.batch_size();
    let classes = logits.sample_len();
    if labels.len() != n {
        return Err(Error::Input(format!("{} labels for a batch of {}", labels.len(), n)));
    }
    if n == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!("label {bad} outside [0, {classes})")));
    }
    let mut total = 0.0f64;
    let mut grad = if want_grad { vec![0.0f32; n * classes] } else { Vec::new() };
    for (s, (&label, row)) in labels.iter().zip(logits.data().chunks(classes)).enumerate() {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[label] as f64;
        if want_grad {
            let g = &mut grad[s * classes..(s + 1) * classes];
            for (j, (gj, &v)) in g.iter_mut().zip(row).enumerate() {
                let prob = (v as f64 - lse).exp();
                let target = if j == label { 1.0 } else { 0.0 };
                *gj = ((prob - target) / n as f64) as f32;
            }
        }
    }
    Ok(((total / n as f64) as f32, grad))
}
