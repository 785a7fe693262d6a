use std::io::{Read, Write};

use rand::{Rng, RngCore};

use super::DistanceEstimator;
use crate::env::State;
use crate::error::{DdlError, Result};

pub(super) const HEADER_TAG: &str = "# mlp-distance v1";

/// Maps a state id to the network's input features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateEncoder {
    /// Normalized `(x, y)` in `[0, 1]^2` for grid ids `y * width + x`.
    Grid { width: usize, height: usize },
    OneHot(usize),
}

impl StateEncoder {
    pub fn dim(&self) -> usize {
        match self {
            StateEncoder::Grid { .. } => 2,
            StateEncoder::OneHot(n) => *n,
        }
    }

    fn encode_into(&self, s: State, out: &mut Vec<f64>) {
        match *self {
            StateEncoder::Grid { width, height } => {
                let norm = |v: usize, n: usize| if n > 1 { v as f64 / (n - 1) as f64 } else { 0.0 };
                out.push(norm(s % width, width));
                out.push(norm(s / width, height));
            }
            StateEncoder::OneHot(n) => {
                let start = out.len();
                out.resize(start + n, 0.0);
                if s < n {
                    out[start + s] = 1.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs x inputs`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn new(inputs: usize, outputs: usize, rng: &mut dyn RngCore) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Dense {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.gen_range(-limit..limit)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Feed-forward distance regressor: `[enc(s), enc(s')]` through tanh hidden
/// layers to a softplus output, trained with Adam on squared error.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDistance {
    encoder: StateEncoder,
    layers: Vec<Dense>,
    learning_rate: f64,
    d_max: f64,
    adam: Adam,
}

impl MlpDistance {
    pub fn new(
        encoder: StateEncoder,
        hidden: &[usize],
        learning_rate: f64,
        d_max: f64,
        rng: &mut dyn RngCore,
    ) -> Self {
        let mut sizes = vec![2 * encoder.dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers: Vec<Dense> = sizes.windows(2).map(|w| Dense::new(w[0], w[1], rng)).collect();
        let n: usize = layers.iter().map(Dense::param_count).sum();
        MlpDistance {
            encoder,
            layers,
            learning_rate,
            d_max,
            adam: Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn encoder(&self) -> StateEncoder {
        self.encoder
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Flattened parameters: per layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "parameter vector length");
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[k..k + nb]);
            k += nb;
        }
    }

    fn input(&self, s: State, t: State) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 * self.encoder.dim());
        self.encoder.encode_into(s, &mut x);
        self.encoder.encode_into(t, &mut x);
        x
    }

    /// Layer activations for one input; the last entry holds the
    /// pre-softplus output.
    fn forward(&self, x: Vec<f64>) -> Vec<Vec<f64>> {
        let mut acts = vec![x];
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.forward(acts.last().expect("input present"), &mut out);
            if k + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        acts
    }

    /// `0.5 * mean((d(s, t) - y)^2)` over the batch.
    pub fn loss(&self, batch: &[(State, State, f64)]) -> f64 {
        let total: f64 = batch
            .iter()
            .map(|&(s, t, y)| {
                let acts = self.forward(self.input(s, t));
                let d = softplus(acts.last().expect("output")[0]);
                0.5 * (d - y).powi(2)
            })
            .sum();
        total / batch.len().max(1) as f64
    }

    /// Loss and its gradient with respect to `params()`.
    pub fn loss_and_grad(&self, batch: &[(State, State, f64)]) -> (f64, Vec<f64>) {
        let mut grad_layers: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut loss = 0.0;
        for &(s, t, y) in batch {
            let acts = self.forward(self.input(s, t));
            let z = acts.last().expect("output")[0];
            let d = softplus(z);
            loss += 0.5 * (d - y).powi(2) * scale;
            // delta at the pre-activation of the current layer
            let mut delta = vec![(d - y) * sigmoid(z) * scale];
            for k in (0..self.layers.len()).rev() {
                let layer = &self.layers[k];
                let input = &acts[k];
                let (gw, gb) = &mut grad_layers[k];
                for o in 0..layer.outputs {
                    gb[o] += delta[o];
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, v) in row.iter_mut().zip(input) {
                        *g += delta[o] * v;
                    }
                }
                if k == 0 {
                    break;
                }
                // back through the weights, then through tanh of layer k-1
                let mut prev = vec![0.0; layer.inputs];
                for o in 0..layer.outputs {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += delta[o] * w;
                    }
                }
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
        let mut grad = Vec::with_capacity(self.param_count());
        for (gw, gb) in grad_layers {
            grad.extend(gw);
            grad.extend(gb);
        }
        (loss, grad)
    }

    /// Relative error `|g - g_fd| / (|g| + |g_fd|)` between the backprop
    /// gradient and central differences with step `h`. Parameters are
    /// restored afterwards.
    pub fn gradient_check(&mut self, batch: &[(State, State, f64)], h: f64) -> f64 {
        let (_, grad) = self.loss_and_grad(batch);
        let base = self.params();
        let mut p = base.clone();
        let mut num = vec![0.0; base.len()];
        for i in 0..base.len() {
            p[i] = base[i] + h;
            self.set_params(&p);
            let up = self.loss(batch);
            p[i] = base[i] - h;
            self.set_params(&p);
            let down = self.loss(batch);
            p[i] = base[i];
            num[i] = (up - down) / (2.0 * h);
        }
        self.set_params(&base);
        let diff = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = grad.iter().map(|a| a * a).sum::<f64>().sqrt() + num.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            0.0
        } else {
            diff / norm
        }
    }

    /// One Adam step on the batch; returns the loss before the step.
    pub fn train_batch(&mut self, batch: &[(State, State, f64)]) -> f64 {
        let (loss, grad) = self.loss_and_grad(batch);
        let mut params = self.params();
        let adam = &mut self.adam;
        adam.t += 1;
        let bc1 = 1.0 - BETA1.powi(adam.t);
        let bc2 = 1.0 - BETA2.powi(adam.t);
        for i in 0..params.len() {
            adam.m[i] = BETA1 * adam.m[i] + (1.0 - BETA1) * grad[i];
            adam.v[i] = BETA2 * adam.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            let m_hat = adam.m[i] / bc1;
            let v_hat = adam.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        self.set_params(&params);
        loss
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let sizes: Vec<String> = self.layer_sizes().iter().map(usize::to_string).collect();
        writeln!(
            w,
            "{HEADER_TAG} layers={} learning_rate={} d_max={}",
            sizes.join(","),
            self.learning_rate,
            self.d_max
        )?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["index", "value"])?;
        for (i, p) in self.params().iter().enumerate() {
            csv.write_record([i.to_string(), p.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(mut r: R, encoder: StateEncoder) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let (header, body) = text
            .split_once('\n')
            .ok_or_else(|| DdlError::Parse("missing checkpoint header".into()))?;
        let rest = header
            .strip_prefix(HEADER_TAG)
            .ok_or_else(|| DdlError::Parse("not an mlp distance checkpoint".into()))?;
        let mut sizes: Vec<usize> = Vec::new();
        let mut lr = None;
        let mut d_max = None;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("layers", v)) => {
                    sizes = v
                        .split(',')
                        .map(|x| x.parse().map_err(|_| DdlError::Parse("bad layer size".into())))
                        .collect::<Result<_>>()?
                }
                Some(("learning_rate", v)) => lr = v.parse().ok(),
                Some(("d_max", v)) => d_max = v.parse().ok(),
                _ => return Err(DdlError::Parse(format!("bad header field {field:?}"))),
            }
        }
        if sizes.len() < 2 || sizes[0] != 2 * encoder.dim() || sizes.last() != Some(&1) {
            return Err(DdlError::ShapeMismatch {
                expected: format!("layers {}..1", 2 * encoder.dim()),
                got: format!("{sizes:?}"),
            });
        }
        let (lr, d_max) = lr
            .zip(d_max)
            .ok_or_else(|| DdlError::Parse("header needs learning_rate and d_max".into()))?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut model = MlpDistance::new(encoder, &sizes[1..sizes.len() - 1], lr, d_max, &mut rng);
        let mut params = vec![0.0; model.param_count()];
        let mut csv = csv::Reader::from_reader(body.as_bytes());
        let mut seen = 0;
        for row in csv.records() {
            let row = row?;
            let i: usize = row
                .get(0)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| DdlError::Parse("bad index".into()))?;
            let v: f64 = row
                .get(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| DdlError::Parse("bad value".into()))?;
            *params.get_mut(i).ok_or_else(|| DdlError::Parse("index out of range".into()))? = v;
            seen += 1;
        }
        if seen != params.len() {
            return Err(DdlError::ShapeMismatch {
                expected: format!("{} parameters", params.len()),
                got: seen.to_string(),
            });
        }
        model.set_params(&params);
        Ok(model)
    }
}

impl DistanceEstimator for MlpDistance {
    fn predict(&self, s: State, t: State) -> f64 {
        let acts = self.forward(self.input(s, t));
        softplus(acts.last().expect("output")[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_model(seed: u64) -> MlpDistance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MlpDistance::new(StateEncoder::Grid { width: 5, height: 4 }, &[6, 5], 1e-2, 20.0, &mut rng)
    }

    #[test]
    fn predictions_nonnegative() {
        let m = small_model(0);
        for s in 0..20 {
            for t in 0..20 {
                assert!(m.predict(s, t) >= 0.0);
            }
        }
    }

    #[test]
    fn central_differences_match_backprop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = small_model(1);
        let batch: Vec<(State, State, f64)> = (0..6)
            .map(|_| (rng.gen_range(0..20), rng.gen_range(0..20), rng.gen_range(0.0..10.0)))
            .collect();
        let (_, grad) = m.loss_and_grad(&batch);
        let base = m.params();
        let h = 1e-6;
        let mut num = vec![0.0; base.len()];
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            m.set_params(&p);
            let up = m.loss(&batch);
            p[i] -= 2.0 * h;
            m.set_params(&p);
            let down = m.loss(&batch);
            num[i] = (up - down) / (2.0 * h);
        }
        let diff: f64 = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt()
            + num.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-6, "relative error {}", diff / norm);
    }

    #[test]
    fn gradient_check_restores_params() {
        let mut m = small_model(4);
        let before = m.params();
        let err = m.gradient_check(&[(0, 7, 3.0), (12, 3, 1.0)], 1e-6);
        assert!(err < 1e-6, "{err}");
        assert_eq!(m.params(), before);
    }

    #[test]
    fn training_reduces_loss() {
        let mut m = small_model(2);
        // target: Manhattan-like function of the encoded coordinates
        let batch: Vec<(State, State, f64)> = (0..20)
            .flat_map(|s| (0..20).map(move |t| (s, t)))
            .map(|(s, t)| {
                let (sx, sy) = (s % 5usize, s / 5);
                let (tx, ty) = (t % 5, t / 5);
                (s, t, (sx.abs_diff(tx) + sy.abs_diff(ty)) as f64)
            })
            .collect();
        let first = m.loss(&batch);
        for _ in 0..400 {
            m.train_batch(&batch);
        }
        assert!(m.loss(&batch) < 0.25 * first);
    }

    #[test]
    fn csv_round_trip() {
        let m = small_model(3);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = MlpDistance::read_csv(buf.as_slice(), m.encoder()).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.layer_sizes(), vec![4, 6, 5, 1]);
        assert!(MlpDistance::read_csv(buf.as_slice(), StateEncoder::OneHot(3)).is_err());
    }
}
