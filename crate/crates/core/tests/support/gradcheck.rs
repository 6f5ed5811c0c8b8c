//! Random tiny networks for gradient checks against the reference.

use nbsim::nn::{Layer, Network, NetworkSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::reference;

pub const FD_STEP: f64 = 1e-3;
const KINK_MARGIN: f64 = 0.02;

/// Tiny random architecture with at most 500 parameters.
pub fn tiny_spec(rng: &mut ChaCha8Rng) -> NetworkSpec {
    loop {
        let spec = match rng.random_range(0..3) {
            0 => {
                let d = rng.random_range(2..10);
                let hidden: Vec<usize> = (0..rng.random_range(0..3)).map(|_| rng.random_range(2..10)).collect();
                NetworkSpec::mlp([1, 1, d], &hidden, rng.random_range(2..6))
            }
            1 => {
                let ch = rng.random_range(1..3);
                let oc = rng.random_range(1..4);
                let stride = rng.random_range(1..3);
                let side = rng.random_range(5..8);
                let conv = Layer::Conv2d { in_ch: ch, out_ch: oc, kernel_h: 3, kernel_w: 2, stride };
                let oh = (side - 3) / stride + 1;
                let ow = (side - 2) / stride + 1;
                let classes = rng.random_range(2..5);
                NetworkSpec {
                    input: [ch, side, side],
                    layers: vec![
                        conv,
                        Layer::Relu,
                        Layer::Flatten,
                        Layer::Dense { in_dim: oc * oh * ow, out_dim: classes },
                    ],
                    num_classes: classes,
                }
            }
            _ => {
                let oc = rng.random_range(1..4);
                let side = rng.random_range(6..9);
                let o = side - 2;
                let classes = rng.random_range(2..5);
                NetworkSpec {
                    input: [1, side, side],
                    layers: vec![
                        Layer::Conv2d { in_ch: 1, out_ch: oc, kernel_h: 3, kernel_w: 3, stride: 1 },
                        Layer::Relu,
                        Layer::MaxPool { k: 2 },
                        Layer::Flatten,
                        Layer::Dense { in_dim: oc * (o / 2) * (o / 2), out_dim: 6 },
                        Layer::Relu,
                        Layer::Dense { in_dim: 6, out_dim: classes },
                    ],
                    num_classes: classes,
                }
            }
        };
        if spec.param_count() <= 500 {
            return spec;
        }
    }
}

pub struct Case {
    pub net: Network,
    pub batch: Tensor,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Draws a net and batch whose ReLU inputs and pooling winners all sit at
/// least `KINK_MARGIN` away from a non-differentiable point, so central
/// differences with the fixed step stay on one linear piece.
pub fn smooth_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = tiny_spec(&mut rng);
    loop {
        let net = Network::init(spec.clone(), rng.random()).unwrap();
        let n = rng.random_range(1..=4);
        let len = spec.input_len();
        let data: Vec<f32> = (0..n * len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows: Vec<Vec<f64>> = data.chunks(len).map(|r| r.iter().map(|&v| v as f64).collect()).collect();
        let params: Vec<f64> = net.params().as_slice().iter().map(|&v| v as f64).collect();
        if reference::batch_margin(&spec, &params, &rows) < KINK_MARGIN {
            continue;
        }
        let labels = (0..n).map(|_| rng.random_range(0..spec.num_classes)).collect();
        let mut shape = vec![n];
        shape.extend_from_slice(&spec.input);
        return Case { net, batch: Tensor::new(shape, data).unwrap(), rows, labels };
    }
}

/// Largest relative error between analytic and central-difference
/// gradients for case `seed`, and whether it is within tolerance.
pub fn check(seed: u64) -> (f64, bool, usize) {
    let case = smooth_case(seed);
    let spec = case.net.spec().clone();
    let params: Vec<f64> = case.net.params().as_slice().iter().map(|&v| v as f64).collect();
    let (_, grad) = case.net.loss_and_grad(&case.batch, &case.labels).unwrap();
    let numeric = reference::fd_grad(&spec, &params, &case.rows, &case.labels, FD_STEP);
    let (worst, ok) = reference::grad_error(grad.as_slice(), &numeric);
    (worst, ok, spec.param_count())
}
