//! Naive per-element `f64` reference network used as an independent oracle
//! for the optimized forward pass and for finite-difference gradients.
#![allow(dead_code)]

use nbsim::nn::{Layer, NetworkSpec};

/// Output of a naive forward pass, plus the smallest distance of any ReLU
/// input from zero and of any max-pool winner from the runner-up.
pub struct Trace {
    pub logits: Vec<f64>,
    pub margin: f64,
}

pub fn forward(spec: &NetworkSpec, params: &[f64], sample: &[f64]) -> Trace {
    let [mut c, mut h, mut w] = spec.input;
    let mut x = sample.to_vec();
    let mut off = 0;
    let mut margin = f64::INFINITY;
    for layer in &spec.layers {
        match *layer {
            Layer::Conv2d { in_ch, out_ch, kernel_h, kernel_w, stride } => {
                assert_eq!(in_ch, c);
                let oh = (h - kernel_h) / stride + 1;
                let ow = (w - kernel_w) / stride + 1;
                let wlen = out_ch * in_ch * kernel_h * kernel_w;
                let mut y = vec![0.0; out_ch * oh * ow];
                for o in 0..out_ch {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = params[off + wlen + o];
                            for ci in 0..in_ch {
                                for ky in 0..kernel_h {
                                    for kx in 0..kernel_w {
                                        let wi = ((o * in_ch + ci) * kernel_h + ky) * kernel_w + kx;
                                        let xi = (ci * h + oy * stride + ky) * w + ox * stride + kx;
                                        acc += params[off + wi] * x[xi];
                                    }
                                }
                            }
                            y[(o * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
                off += wlen + out_ch;
                x = y;
                c = out_ch;
                h = oh;
                w = ow;
            }
            Layer::MaxPool { k } => {
                let (oh, ow) = (h / k, w / k);
                let mut y = vec![0.0; c * oh * ow];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut vals = Vec::new();
                            for dy in 0..k {
                                for dx in 0..k {
                                    vals.push(x[(ch * h + oy * k + dy) * w + ox * k + dx]);
                                }
                            }
                            vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                            if vals.len() > 1 {
                                margin = margin.min(vals[0] - vals[1]);
                            }
                            y[(ch * oh + oy) * ow + ox] = vals[0];
                        }
                    }
                }
                x = y;
                h = oh;
                w = ow;
            }
            Layer::Relu => {
                for v in &mut x {
                    margin = margin.min(v.abs());
                    *v = v.max(0.0);
                }
            }
            Layer::Flatten => {
                c = 1;
                h = 1;
                w = x.len();
            }
            Layer::Dense { in_dim, out_dim } => {
                assert_eq!(in_dim, x.len());
                let mut y = vec![0.0; out_dim];
                for (o, yo) in y.iter_mut().enumerate() {
                    let mut acc = params[off + in_dim * out_dim + o];
                    for i in 0..in_dim {
                        acc += params[off + o * in_dim + i] * x[i];
                    }
                    *yo = acc;
                }
                off += in_dim * out_dim + out_dim;
                x = y;
                c = 1;
                h = 1;
                w = out_dim;
            }
        }
    }
    Trace { logits: x, margin }
}

/// Mean softmax cross-entropy over `samples`.
pub fn loss(spec: &NetworkSpec, params: &[f64], samples: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (s, &y) in samples.iter().zip(labels) {
        let z = forward(spec, params, s).logits;
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / samples.len() as f64
}

/// Smallest kink margin across a batch.
pub fn batch_margin(spec: &NetworkSpec, params: &[f64], samples: &[Vec<f64>]) -> f64 {
    samples
        .iter()
        .map(|s| forward(spec, params, s).margin)
        .fold(f64::INFINITY, f64::min)
}

/// Central finite-difference gradient of [`loss`] with step `h`.
pub fn fd_grad(spec: &NetworkSpec, params: &[f64], samples: &[Vec<f64>], labels: &[usize], h: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = loss(spec, &p, samples, labels);
            p[i] = orig - h;
            let down = loss(spec, &p, samples, labels);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Max relative error under the gradient-check convention: coordinates whose
/// analytic magnitude is below `1e-6` are compared absolutely.
pub fn grad_error(analytic: &[f32], numeric: &[f64]) -> (f64, bool) {
    let mut worst = 0.0f64;
    let mut ok = true;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let a = a as f64;
        if a.abs() < 1e-6 {
            if (a - n).abs() >= 1e-6 {
                ok = false;
            }
            continue;
        }
        let rel = (a - n).abs() / a.abs().max(n.abs());
        worst = worst.max(rel);
        if rel >= 1e-4 {
            ok = false;
        }
    }
    (worst, ok)
}
