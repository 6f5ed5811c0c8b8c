use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a feed-forward network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    /// Valid (unpadded) 2-D convolution.
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
    },
    /// Non-overlapping `k x k` max pooling; trailing rows/columns that do
    /// not fill a window are dropped.
    MaxPool { k: usize },
    Relu,
    Flatten,
    Dense { in_dim: usize, out_dim: usize },
}

/// Activation shape of a single sample between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActShape {
    Image { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl ActShape {
    pub fn len(&self) -> usize {
        match *self {
            ActShape::Image { c, h, w } => c * h * w,
            ActShape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[channels, height, width]` of one input sample.
    pub input: [usize; 3],
    pub layers: Vec<Layer>,
    pub num_classes: usize,
}

impl NetworkSpec {
    /// Two conv + two dense layers for 28x28 single-channel inputs.
    pub fn mnist_cnn() -> Self {
        NetworkSpec {
            input: [1, 28, 28],
            layers: vec![
                Layer::Conv2d { in_ch: 1, out_ch: 32, kernel_h: 5, kernel_w: 5, stride: 1 },
                Layer::Relu,
                Layer::MaxPool { k: 2 },
                Layer::Conv2d { in_ch: 32, out_ch: 64, kernel_h: 5, kernel_w: 5, stride: 1 },
                Layer::Relu,
                Layer::MaxPool { k: 2 },
                Layer::Flatten,
                Layer::Dense { in_dim: 64 * 4 * 4, out_dim: 512 },
                Layer::Relu,
                Layer::Dense { in_dim: 512, out_dim: 10 },
            ],
            num_classes: 10,
        }
    }

    /// 784 -> 128 -> 10 perceptron.
    pub fn mnist_mlp() -> Self {
        Self::mlp([1, 28, 28], &[128], 10)
    }

    pub fn mlp(input: [usize; 3], hidden: &[usize], num_classes: usize) -> Self {
        let mut layers = vec![Layer::Flatten];
        let mut prev = input.iter().product();
        for &h in hidden {
            layers.push(Layer::Dense { in_dim: prev, out_dim: h });
            layers.push(Layer::Relu);
            prev = h;
        }
        layers.push(Layer::Dense { in_dim: prev, out_dim: num_classes });
        NetworkSpec { input, layers, num_classes }
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    /// Checks dimensional compatibility and returns the activation shape
    /// entering each layer followed by the network output shape.
    pub fn shapes(&self) -> Result<Vec<ActShape>> {
        let [c, h, w] = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Spec(format!("input dims must be positive, got {:?}", self.input)));
        }
        if self.num_classes == 0 {
            return Err(Error::Spec("num_classes must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Spec("network has no layers".into()));
        }
        let mut shape = ActShape::Image { c, h, w };
        let mut out = vec![shape];
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match (*layer, shape) {
                (
                    Layer::Conv2d { in_ch, out_ch, kernel_h, kernel_w, stride },
                    ActShape::Image { c, h, w },
                ) => {
                    if in_ch != c {
                        return Err(Error::Spec(format!(
                            "layer {i}: conv expects {in_ch} channels, input has {c}"
                        )));
                    }
                    if out_ch == 0 || stride == 0 || kernel_h == 0 || kernel_w == 0 {
                        return Err(Error::Spec(format!("layer {i}: conv sizes must be positive")));
                    }
                    if kernel_h > h || kernel_w > w {
                        return Err(Error::Spec(format!(
                            "layer {i}: kernel {kernel_h}x{kernel_w} larger than input {h}x{w}"
                        )));
                    }
                    ActShape::Image {
                        c: out_ch,
                        h: (h - kernel_h) / stride + 1,
                        w: (w - kernel_w) / stride + 1,
                    }
                }
                (Layer::MaxPool { k }, ActShape::Image { c, h, w }) => {
                    if k == 0 || k > h || k > w {
                        return Err(Error::Spec(format!(
                            "layer {i}: pool size {k} invalid for {h}x{w} input"
                        )));
                    }
                    ActShape::Image { c, h: h / k, w: w / k }
                }
                (Layer::Relu, s) => s,
                (Layer::Flatten, s) => ActShape::Flat(s.len()),
                (Layer::Dense { in_dim, out_dim }, ActShape::Flat(n)) => {
                    if in_dim != n {
                        return Err(Error::Spec(format!(
                            "layer {i}: dense expects {in_dim} inputs, got {n}"
                        )));
                    }
                    if out_dim == 0 {
                        return Err(Error::Spec(format!("layer {i}: dense output must be positive")));
                    }
                    ActShape::Flat(out_dim)
                }
                (layer, s) => {
                    return Err(Error::Spec(format!("layer {i}: {layer:?} cannot follow shape {s:?}")))
                }
            };
            out.push(shape);
        }
        if shape != ActShape::Flat(self.num_classes) {
            return Err(Error::Spec(format!(
                "network output {shape:?} does not match {} classes",
                self.num_classes
            )));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(layer_param_count).sum()
    }
}

pub(crate) fn layer_param_count(layer: &Layer) -> usize {
    match *layer {
        Layer::Conv2d { in_ch, out_ch, kernel_h, kernel_w, .. } => {
            out_ch * in_ch * kernel_h * kernel_w + out_ch
        }
        Layer::Dense { in_dim, out_dim } => in_dim * out_dim + out_dim,
        _ => 0,
    }
}
