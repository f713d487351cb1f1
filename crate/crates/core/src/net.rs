//! Fixed-topology feedforward regression network.
//!
//! The network maps a fingerprint to a 2-D position. Hidden layers use ReLU,
//! the output layer is affine. All parameters live in one flat vector with a
//! frozen layout so checkpoints are portable:
//!
//! ```text
//! [ W_1 (fan_out x fan_in, row-major) | b_1 | W_2 | b_2 | ... | W_out | b_out ]
//! ```
//!
//! Row `o` of `W_l` holds the incoming weights of unit `o` in layer `l`.
//! Stored weights are multiplied by `1/sqrt(fan_in)` in the forward pass, so
//! unit-variance parameters give unit-scale activations at any width; biases
//! are used as stored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::Task;

pub const OUTPUT_DIM: usize = 2;
pub const DEFAULT_HIDDEN: [usize; 4] = [32, 32, 32, 32];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

/// One network's weights and biases in the canonical layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlatParams(Vec<f64>);

impl FlatParams {
    pub fn new(arch: &Architecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::invalid(format!(
                "parameter vector has length {}, architecture needs {}",
                values.len(),
                arch.param_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("parameter {i} is not finite")));
        }
        Ok(FlatParams(values))
    }

    pub fn zeros(arch: &Architecture) -> Self {
        FlatParams(vec![0.0; arch.param_count()])
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        FlatParams(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Architecture {
    /// Architecture with the fixed two-dimensional output.
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>) -> Result<Self> {
        let arch = Architecture {
            input_dim,
            hidden_dims,
            output_dim: OUTPUT_DIM,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn with_default_hidden(input_dim: usize) -> Result<Self> {
        Self::new(input_dim, DEFAULT_HIDDEN.to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim must be positive"));
        }
        if self.hidden_dims.iter().any(|&w| w == 0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        if self.output_dim != OUTPUT_DIM {
            return Err(Error::invalid(format!(
                "output_dim must be {OUTPUT_DIM}, got {}",
                self.output_dim
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every affine layer, input to output.
    pub fn layers(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let dims: Vec<usize> = std::iter::once(self.input_dim)
            .chain(self.hidden_dims.iter().copied())
            .chain(std::iter::once(self.output_dim))
            .collect();
        (0..dims.len() - 1).map(move |l| (dims[l], dims[l + 1]))
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|(i, o)| i * o + o).sum()
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "parameter vector has length {}, architecture needs {}",
                theta.len(),
                self.param_count()
            )));
        }
        Ok(())
    }

    fn check_task(&self, task: &Task) -> Result<()> {
        task.require_nonempty()?;
        for (j, s) in task.samples.iter().enumerate() {
            if s.x.len() != self.input_dim {
                return Err(Error::invalid(format!(
                    "sample {j} has {} features, network expects {}",
                    s.x.len(),
                    self.input_dim
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, theta: &FlatParams, x: &[f64]) -> Result<[f64; 2]> {
        self.check_theta(theta.as_slice())?;
        if x.len() != self.input_dim {
            return Err(Error::invalid(format!(
                "feature vector has length {}, network expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(self.forward_raw(theta.as_slice(), x))
    }

    /// Mean squared Euclidean distance between predictions and targets.
    pub fn loss(&self, theta: &FlatParams, task: &Task) -> Result<f64> {
        self.check_theta(theta.as_slice())?;
        self.check_task(task)?;
        Ok(self.loss_raw(theta.as_slice(), task))
    }

    /// Loss and its exact gradient with respect to every parameter.
    pub fn loss_grad(&self, theta: &FlatParams, task: &Task) -> Result<(f64, Vec<f64>)> {
        self.check_theta(theta.as_slice())?;
        self.check_task(task)?;
        let mut grad = vec![0.0; self.param_count()];
        let loss = self.loss_grad_raw(theta.as_slice(), task, &mut grad);
        Ok((loss, grad))
    }

    /// Unchecked forward pass; shapes must already be validated.
    pub(crate) fn forward_raw(&self, theta: &[f64], x: &[f64]) -> [f64; 2] {
        let mut acts = Vec::new();
        self.forward_trace(theta, x, &mut acts);
        let out = acts.last().expect("network has an output layer");
        [out[0], out[1]]
    }

    pub(crate) fn loss_raw(&self, theta: &[f64], task: &Task) -> f64 {
        let mut acts = Vec::new();
        let mut total = 0.0;
        for s in &task.samples {
            self.forward_trace(theta, &s.x, &mut acts);
            let out = acts.last().expect("network has an output layer");
            let dx = out[0] - s.y[0];
            let dy = out[1] - s.y[1];
            total += dx * dx + dy * dy;
        }
        total / task.samples.len() as f64
    }

    /// Writes the gradient into `grad` (overwriting it) and returns the loss.
    pub(crate) fn loss_grad_raw(&self, theta: &[f64], task: &Task, grad: &mut [f64]) -> f64 {
        debug_assert_eq!(grad.len(), theta.len());
        grad.iter_mut().for_each(|g| *g = 0.0);
        let layers: Vec<(usize, usize)> = self.layers().collect();
        let offsets = layer_offsets(&layers);
        let m = task.samples.len() as f64;

        let mut acts = Vec::new();
        let mut delta: Vec<f64> = Vec::new();
        let mut delta_prev: Vec<f64> = Vec::new();
        let mut total = 0.0;
        for s in &task.samples {
            self.forward_trace(theta, &s.x, &mut acts);
            let out = acts.last().expect("network has an output layer");
            let dx = out[0] - s.y[0];
            let dy = out[1] - s.y[1];
            total += dx * dx + dy * dy;

            delta.clear();
            delta.push(2.0 * dx / m);
            delta.push(2.0 * dy / m);

            for l in (0..layers.len()).rev() {
                let (fan_in, fan_out) = layers[l];
                let w_off = offsets[l];
                let b_off = w_off + fan_in * fan_out;
                let input = &acts[l];
                let scale = weight_scale(fan_in);
                for o in 0..fan_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let ds = d * scale;
                    let row = &mut grad[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                    for (g, &a) in row.iter_mut().zip(input) {
                        *g += ds * a;
                    }
                    grad[b_off + o] += d;
                }
                if l > 0 {
                    delta_prev.clear();
                    delta_prev.resize(fan_in, 0.0);
                    for o in 0..fan_out {
                        let d = delta[o] * scale;
                        if d == 0.0 {
                            continue;
                        }
                        let row = &theta[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                        for (p, &w) in delta_prev.iter_mut().zip(row) {
                            *p += d * w;
                        }
                    }
                    // ReLU: the post-activation is positive iff the pre-activation is.
                    for (p, &a) in delta_prev.iter_mut().zip(input) {
                        if a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    std::mem::swap(&mut delta, &mut delta_prev);
                }
            }
        }
        total / m
    }

    /// Fills `acts` with the input followed by every layer's output.
    fn forward_trace(&self, theta: &[f64], x: &[f64], acts: &mut Vec<Vec<f64>>) {
        let n_layers = self.hidden_dims.len() + 1;
        acts.resize_with(n_layers + 1, Vec::new);
        acts[0].clear();
        acts[0].extend_from_slice(x);
        let mut off = 0;
        for (l, (fan_in, fan_out)) in self.layers().enumerate() {
            let (prev, rest) = acts.split_at_mut(l + 1);
            let input = &prev[l];
            let output = &mut rest[0];
            output.clear();
            let weights = &theta[off..off + fan_in * fan_out];
            let biases = &theta[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let hidden = l + 1 < n_layers;
            let scale = weight_scale(fan_in);
            for o in 0..fan_out {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let z = biases[o] + scale * dot(row, input);
                output.push(if hidden && z <= 0.0 { 0.0 } else { z });
            }
            off += fan_in * fan_out + fan_out;
        }
    }
}

/// Multiplier applied to every stored weight of a layer with `fan_in` inputs.
#[inline]
pub fn weight_scale(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

fn layer_offsets(layers: &[(usize, usize)]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(layers.len());
    let mut off = 0;
    for &(i, o) in layers {
        offsets.push(off);
        off += i * o + o;
    }
    offsets
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize.
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::Sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> Architecture {
        Architecture::new(3, vec![2, 2, 2, 2]).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-scale..scale)).collect()
    }

    /// Independent forward pass written against the documented layout with
    /// explicit nested loops and index arithmetic.
    fn reference_forward(arch: &Architecture, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let mut dims = vec![arch.input_dim];
        dims.extend(&arch.hidden_dims);
        dims.push(2);
        let mut a = x.to_vec();
        let mut p = 0usize;
        for l in 0..dims.len() - 1 {
            let (n_in, n_out) = (dims[l], dims[l + 1]);
            let mut z = vec![0.0; n_out];
            for (o, zo) in z.iter_mut().enumerate() {
                let mut acc = 0.0;
                for i in 0..n_in {
                    acc += theta[p + o * n_in + i] * a[i];
                }
                *zo = acc / (n_in as f64).sqrt();
            }
            p += n_in * n_out;
            for (o, zo) in z.iter_mut().enumerate() {
                *zo += theta[p + o];
            }
            p += n_out;
            if l + 2 < dims.len() {
                for zo in z.iter_mut() {
                    *zo = zo.max(0.0);
                }
            }
            a = z;
        }
        a
    }

    #[test]
    fn param_count_matches_layer_sum() {
        let arch = small_arch();
        // 3*2+2 + 3*(2*2+2) + 2*2+2
        assert_eq!(arch.param_count(), 8 + 18 + 6);
        let d = Architecture::with_default_hidden(24).unwrap();
        assert_eq!(d.param_count(), 24 * 32 + 32 + 3 * (32 * 32 + 32) + 32 * 2 + 2);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let arch = small_arch();
        let theta = FlatParams::zeros(&arch);
        assert_eq!(arch.forward(&theta, &[1.0, -2.0, 5.0]).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn output_bias_passes_through() {
        let arch = small_arch();
        let mut theta = FlatParams::zeros(&arch);
        let n = theta.len();
        theta.as_mut_slice()[n - 2] = 3.0;
        theta.as_mut_slice()[n - 1] = -1.0;
        assert_eq!(arch.forward(&theta, &[0.3, 0.1, 9.0]).unwrap(), [3.0, -1.0]);
    }

    #[test]
    fn forward_matches_reference_implementation() {
        let arch = small_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let theta = random_vec(&mut rng, arch.param_count(), 1.0);
            let x = random_vec(&mut rng, 3, 2.0);
            let got = arch
                .forward(&FlatParams::new(&arch, theta.clone()).unwrap(), &x)
                .unwrap();
            let want = reference_forward(&arch, &theta, &x);
            assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let arch = small_arch();
        let theta = FlatParams::zeros(&arch);
        assert!(matches!(
            arch.forward(&theta, &[1.0]),
            Err(Error::InvalidInput(_))
        ));
        assert!(FlatParams::new(&arch, vec![0.0; 3]).is_err());
        assert!(FlatParams::new(&arch, vec![f64::NAN; arch.param_count()]).is_err());
    }

    #[test]
    fn loss_hand_values() {
        let arch = small_arch();
        let theta = FlatParams::zeros(&arch);
        let one = Task::new(0, vec![Sample { x: vec![0.0; 3], y: [3.0, 4.0] }]);
        assert_eq!(arch.loss(&theta, &one).unwrap(), 25.0);
        let two = Task::new(
            0,
            vec![
                Sample { x: vec![0.0; 3], y: [3.0, 4.0] },
                Sample { x: vec![1.0; 3], y: [0.0, 1.0] },
            ],
        );
        assert_eq!(arch.loss(&theta, &two).unwrap(), 13.0);
        assert!(matches!(
            arch.loss(&theta, &Task::new(0, vec![])),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let arch = small_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta = FlatParams::new(&arch, random_vec(&mut rng, arch.param_count(), 1.0)).unwrap();
        let samples = (0..6)
            .map(|_| {
                let x = random_vec(&mut rng, 3, 1.0);
                let y = arch.forward(&theta, &x).unwrap();
                Sample { x, y }
            })
            .collect();
        let task = Task::new(0, samples);
        let (l, g) = arch.loss_grad(&theta, &task).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-12);
    }

    #[test]
    fn affine_network_gradient_matches_least_squares_closed_form() {
        // No hidden layers: f(x) = W x + b, loss = mean ||W x + b - y||^2.
        let arch = Architecture::new(3, vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let theta = random_vec(&mut rng, arch.param_count(), 1.0);
        let m = 7;
        let samples: Vec<Sample> = (0..m)
            .map(|_| Sample {
                x: random_vec(&mut rng, 3, 1.0),
                y: [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
            })
            .collect();
        let task = Task::new(0, samples.clone());
        let (_, g) = arch
            .loss_grad(&FlatParams::new(&arch, theta.clone()).unwrap(), &task)
            .unwrap();
        // Per output coordinate c: weights row c and bias c form an augmented
        // vector w_c over X_aug = [x / sqrt(3), 1]; gradient = 2 X_aug^T (X_aug w_c - y_c) / m.
        for c in 0..2 {
            let w: Vec<f64> = (0..3).map(|i| theta[c * 3 + i]).chain([theta[6 + c]]).collect();
            let mut expect = [0.0; 4];
            for s in &samples {
                let c3 = 3f64.sqrt();
                let xa = [s.x[0] / c3, s.x[1] / c3, s.x[2] / c3, 1.0];
                let r: f64 = xa.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - s.y[c];
                for k in 0..4 {
                    expect[k] += 2.0 * xa[k] * r / m as f64;
                }
            }
            for i in 0..3 {
                assert!((g[c * 3 + i] - expect[i]).abs() < 1e-12);
            }
            assert!((g[6 + c] - expect[3]).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_grad_value_equals_loss() {
        let arch = small_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let theta = FlatParams::new(&arch, random_vec(&mut rng, arch.param_count(), 1.0)).unwrap();
        let task = Task::new(
            0,
            (0..5)
                .map(|_| Sample {
                    x: random_vec(&mut rng, 3, 1.0),
                    y: [1.0, 2.0],
                })
                .collect(),
        );
        let (l, _) = arch.loss_grad(&theta, &task).unwrap();
        assert_eq!(l.to_bits(), arch.loss(&theta, &task).unwrap().to_bits());
    }
}
