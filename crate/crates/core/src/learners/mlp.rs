//! Softmax multilayer perceptron trained by plain mini-batch gradient
//! descent (constant learning rate, no momentum) on cross-entropy plus
//! an L1 weight penalty.
//!
//! Hidden layers apply tanh; the output layer emits 10 logits passed
//! through softmax. Weights initialize uniformly on +/- 1/sqrt(fan_in)
//! from the seeded generator; biases start at zero.
//!
//! The L1 term enters the update as a proximal soft-threshold after
//! each gradient step (shrink every weight toward zero by lr * l1 and
//! clamp sign crossings to exactly zero). This minimizes the same
//! penalized objective while letting a dominant penalty produce true
//! sparsity instead of oscillation; [`Mlp::objective_gradients`] still
//! exposes the full subgradient for gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::N_STATES;

use super::{early_stop, Dataset, MlpSpec, TrainReport, PROB_CLIP};

const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major weights: w[o * n_in + i] connects input i to output o.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub n_features: usize,
    pub layers: Vec<Layer>,
}

/// Softmax with max-subtraction; never overflows.
fn softmax(logits: &[f64; N_STATES]) -> [f64; N_STATES] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; N_STATES];
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - m).exp();
        sum += *o;
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

impl Layer {
    fn forward(&self, input: &[f64], output: &mut [f64]) {
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(input) {
                acc += wi * xi;
            }
            output[o] = acc;
        }
    }
}

/// Per-layer gradient buffers, same shapes as the layer parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl Mlp {
    /// Builds a seeded network with the given hidden sizes.
    pub fn init(n_features: usize, hidden_sizes: &[usize], seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![n_features];
        sizes.extend_from_slice(hidden_sizes);
        sizes.push(N_STATES);
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for win in sizes.windows(2) {
            let (n_in, n_out) = (win[0], win[1]);
            let bound = 1.0 / (n_in.max(1) as f64).sqrt();
            let w = (0..n_in * n_out)
                .map(|_| (2.0 * rng.gen::<f64>() - 1.0) * bound)
                .collect();
            layers.push(Layer {
                n_in,
                n_out,
                w,
                b: vec![0.0; n_out],
            });
        }
        Mlp { n_features, layers }
    }

    /// Probability vector for one feature row.
    pub fn predict_row(&self, row: &[f64]) -> [f64; N_STATES] {
        let mut current = row.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.n_out];
            layer.forward(&current, &mut next);
            if li + 1 < self.layers.len() {
                for v in &mut next {
                    *v = v.tanh();
                }
            }
            current = next;
        }
        let mut logits = [0.0; N_STATES];
        logits.copy_from_slice(&current);
        softmax(&logits)
    }

    /// Objective over the index set: mean cross-entropy in bits plus
    /// l1 * sum |w| over all layer weights (biases unpenalized).
    pub fn objective(&self, data_x: &[f64], data_y: &[u8], idx: &[usize], l1: f64) -> f64 {
        let nf = self.n_features;
        let mut ce = 0.0;
        for &i in idx {
            let probs = self.predict_row(&data_x[i * nf..(i + 1) * nf]);
            ce += -probs[data_y[i] as usize].max(PROB_CLIP).log2();
        }
        ce /= idx.len() as f64;
        let penalty: f64 = self
            .layers
            .iter()
            .map(|l| l.w.iter().map(|w| w.abs()).sum::<f64>())
            .sum();
        ce + l1 * penalty
    }

    /// Analytic gradients of [`Mlp::objective`] over the index set.
    /// Returns (objective value, gradients).
    pub fn objective_gradients(
        &self,
        data_x: &[f64],
        data_y: &[u8],
        idx: &[usize],
        l1: f64,
    ) -> (f64, Gradients) {
        let nf = self.n_features;
        let n = idx.len() as f64;
        let mut grads = Gradients {
            w: self.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: self.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        };
        let mut ce = 0.0;
        // activations[0] is the input row; activations[k] the output of
        // layer k-1 after its nonlinearity.
        let n_layers = self.layers.len();
        for &i in idx {
            let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
            activations.push(data_x[i * nf..(i + 1) * nf].to_vec());
            for (li, layer) in self.layers.iter().enumerate() {
                let mut out = vec![0.0; layer.n_out];
                layer.forward(activations.last().unwrap(), &mut out);
                if li + 1 < n_layers {
                    for v in &mut out {
                        *v = v.tanh();
                    }
                }
                activations.push(out);
            }
            let mut logits = [0.0; N_STATES];
            logits.copy_from_slice(activations.last().unwrap());
            let probs = softmax(&logits);
            ce += -probs[data_y[i] as usize].max(PROB_CLIP).log2();

            // delta at the output: d(mean CE bits)/d logit.
            let mut delta: Vec<f64> = probs.to_vec();
            delta[data_y[i] as usize] -= 1.0;
            for d in &mut delta {
                *d /= n * LN_2;
            }
            for li in (0..n_layers).rev() {
                let layer = &self.layers[li];
                let input = &activations[li];
                for o in 0..layer.n_out {
                    let d = delta[o];
                    grads.b[li][o] += d;
                    let grow = &mut grads.w[li][o * layer.n_in..(o + 1) * layer.n_in];
                    for (g, &x) in grow.iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
                if li > 0 {
                    let mut prev = vec![0.0; layer.n_in];
                    for o in 0..layer.n_out {
                        let d = delta[o];
                        let wrow = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                        for (p, &w) in prev.iter_mut().zip(wrow) {
                            *p += d * w;
                        }
                    }
                    // tanh'(z) = 1 - tanh(z)^2, and activations hold tanh(z).
                    for (p, &a) in prev.iter_mut().zip(&activations[li]) {
                        *p *= 1.0 - a * a;
                    }
                    delta = prev;
                }
            }
        }
        ce /= n;
        let mut penalty = 0.0;
        for (li, layer) in self.layers.iter().enumerate() {
            for (g, &w) in grads.w[li].iter_mut().zip(&layer.w) {
                penalty += w.abs();
                *g += l1 * w.signum();
            }
        }
        (ce + l1 * penalty, grads)
    }

    fn apply_gradients(&mut self, grads: &Gradients, lr: f64) {
        for (li, layer) in self.layers.iter_mut().enumerate() {
            for (w, g) in layer.w.iter_mut().zip(&grads.w[li]) {
                *w -= lr * g;
            }
            for (b, g) in layer.b.iter_mut().zip(&grads.b[li]) {
                *b -= lr * g;
            }
        }
    }

    /// Proximal step for the L1 penalty: shrink every weight toward zero
    /// by `t`, snapping to zero on a sign crossing. Biases untouched.
    fn soft_threshold(&mut self, t: f64) {
        if t == 0.0 {
            return;
        }
        for layer in &mut self.layers {
            for w in &mut layer.w {
                *w = w.signum() * (w.abs() - t).max(0.0);
            }
        }
    }
}

/// Full-dataset training cross-entropy in bits (no penalty term); this
/// is the monitored, reported loss.
fn train_loss(mlp: &Mlp, data: &Dataset) -> f64 {
    let mut ce = 0.0;
    for i in 0..data.n_rows {
        let probs = mlp.predict_row(data.row(i));
        ce += -probs[data.y[i] as usize].max(PROB_CLIP).log2();
    }
    ce / data.n_rows as f64
}

pub(crate) fn train_mlp(spec: &MlpSpec, data: &Dataset) -> Result<(Mlp, TrainReport)> {
    let mut mlp = Mlp::init(data.n_features, &spec.hidden_sizes, spec.seed);
    let mut order: Vec<usize> = (0..data.n_rows).collect();
    // Separate stream for the batch shuffle so changing the architecture
    // does not perturb the data order.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut losses: Vec<f64> = Vec::with_capacity(spec.epochs);
    let mut stopped_early = false;
    for epoch in 0..spec.epochs {
        fisher_yates(&mut order, &mut shuffle_rng);
        for batch in order.chunks(spec.batch_size) {
            let (_, grads) = mlp.objective_gradients(&data.x, &data.y, batch, 0.0);
            mlp.apply_gradients(&grads, spec.learning_rate);
            mlp.soft_threshold(spec.learning_rate * spec.l1_lambda);
        }
        let loss = train_loss(&mlp, data);
        if !loss.is_finite() {
            return Err(Error::compute(format!(
                "non-finite training loss at round {}",
                epoch + 1
            )));
        }
        losses.push(loss);
        if let Some(stop) = early_stop(&losses, 1e-5, 3) {
            if stop == losses.len() {
                stopped_early = true;
                break;
            }
        }
    }
    let rounds_run = losses.len();
    Ok((
        mlp,
        TrainReport {
            loss_by_round: losses,
            stopped_early,
            rounds_run,
        },
    ))
}

fn fisher_yates(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}
