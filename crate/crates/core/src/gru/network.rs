use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GruError, Matrix};
use crate::scalar::{log_softmax, sigmoid};
use crate::Scalar;

/// Layer widths of one skip-connected network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkDims {
    #[serde(rename = "x")]
    pub input: usize,
    #[serde(rename = "h")]
    pub hidden: Vec<usize>,
    #[serde(rename = "o")]
    pub output: usize,
}

impl NetworkDims {
    pub fn new(input: usize, hidden: Vec<usize>, output: usize) -> Self {
        NetworkDims {
            input,
            hidden,
            output,
        }
    }

    /// Three equal hidden layers.
    pub fn uniform(input: usize, hidden: usize, output: usize) -> Self {
        NetworkDims::new(input, vec![hidden; 3], output)
    }

    /// Feed-forward input width of hidden layer `i`: the global input plus
    /// every lower hidden layer.
    pub fn layer_input_width(&self, i: usize) -> usize {
        self.input + self.hidden[..i].iter().sum::<usize>()
    }

    pub fn output_input_width(&self) -> usize {
        self.input + self.hidden.iter().sum::<usize>()
    }
}

/// One GRU layer. `w_y*` act on the layer's feed-forward input, `w_h*` on
/// its own previous state. The candidate has no bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruLayer<T> {
    pub w_yh: Matrix<T>,
    pub w_hh: Matrix<T>,
    pub w_yz: Matrix<T>,
    pub w_hz: Matrix<T>,
    pub b_z: Vec<T>,
    pub w_yr: Matrix<T>,
    pub w_hr: Matrix<T>,
    pub b_r: Vec<T>,
    /// Trainable initial state.
    pub h0: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputLayer<T> {
    pub w_yo: Matrix<T>,
    pub b_o: Vec<T>,
}

/// Deep GRU network: input feeds every hidden layer and the output layer,
/// each hidden layer feeds all layers above it within the same step.
#[derive(Debug, Clone, PartialEq)]
pub struct GruNetwork<T> {
    pub dims: NetworkDims,
    pub layers: Vec<GruLayer<T>>,
    pub output: OutputLayer<T>,
}

/// Current hidden activations, one vector per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState<T> {
    pub h: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    pub h_prev: Vec<T>,
    pub z: Vec<T>,
    pub r: Vec<T>,
    /// `w_hh * h_prev`, before the reset gate.
    pub u: Vec<T>,
    pub h_tilde: Vec<T>,
    pub h: Vec<T>,
}

/// Everything one step leaves behind for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache<T> {
    pub x: Vec<T>,
    pub layers: Vec<LayerCache<T>>,
    pub log_probs: Vec<T>,
    pub probs: Vec<T>,
}

impl<T: Scalar> StepCache<T> {
    pub fn state(&self) -> NetworkState<T> {
        NetworkState {
            h: self.layers.iter().map(|l| l.h.clone()).collect(),
        }
    }

    /// Feed-forward input of hidden layer `i` (or of the output layer when
    /// `i` equals the layer count).
    pub fn layer_input(&self, i: usize) -> Vec<T> {
        let mut y = self.x.clone();
        for l in &self.layers[..i] {
            y.extend_from_slice(&l.h);
        }
        y
    }
}

/// Cached forward pass over a whole sequence.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    pub steps: Vec<StepCache<T>>,
}

impl<T> Tape<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn uniform_matrix<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix<T> {
    let a = 1.0 / (cols.max(1) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| T::lit(rng.random_range(-a..=a)))
}

impl<T: Scalar> GruLayer<T> {
    fn zeros(input: usize, hidden: usize) -> Self {
        GruLayer {
            w_yh: Matrix::zeros(hidden, input),
            w_hh: Matrix::zeros(hidden, hidden),
            w_yz: Matrix::zeros(hidden, input),
            w_hz: Matrix::zeros(hidden, hidden),
            b_z: vec![T::zero(); hidden],
            w_yr: Matrix::zeros(hidden, input),
            w_hr: Matrix::zeros(hidden, hidden),
            b_r: vec![T::zero(); hidden],
            h0: vec![T::zero(); hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.h0.len()
    }
}

impl<T: Scalar> GruNetwork<T> {
    pub fn zeros(dims: NetworkDims) -> Self {
        let layers = (0..dims.hidden.len())
            .map(|i| GruLayer::zeros(dims.layer_input_width(i), dims.hidden[i]))
            .collect();
        let output = OutputLayer {
            w_yo: Matrix::zeros(dims.output, dims.output_input_width()),
            b_o: vec![T::zero(); dims.output],
        };
        GruNetwork {
            dims,
            layers,
            output,
        }
    }

    /// Weights uniform in ±1/sqrt(fan_in); biases and initial states zero.
    pub fn init<R: Rng + ?Sized>(dims: NetworkDims, rng: &mut R) -> Self {
        let mut net = Self::zeros(dims);
        for layer in &mut net.layers {
            for m in [
                &mut layer.w_yh,
                &mut layer.w_hh,
                &mut layer.w_yz,
                &mut layer.w_hz,
                &mut layer.w_yr,
                &mut layer.w_hr,
            ] {
                *m = uniform_matrix(m.rows, m.cols, rng);
            }
        }
        let w = &net.output.w_yo;
        net.output.w_yo = uniform_matrix(w.rows, w.cols, rng);
        net
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims.clone())
    }

    pub fn initial_state(&self) -> NetworkState<T> {
        NetworkState {
            h: self.layers.iter().map(|l| l.h0.clone()).collect(),
        }
    }

    /// Named parameter blocks in a fixed order.
    pub fn blocks(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.w_yh"), &l.w_yh.data));
            out.push((format!("layer{i}.w_hh"), &l.w_hh.data));
            out.push((format!("layer{i}.w_yz"), &l.w_yz.data));
            out.push((format!("layer{i}.w_hz"), &l.w_hz.data));
            out.push((format!("layer{i}.b_z"), &l.b_z));
            out.push((format!("layer{i}.w_yr"), &l.w_yr.data));
            out.push((format!("layer{i}.w_hr"), &l.w_hr.data));
            out.push((format!("layer{i}.b_r"), &l.b_r));
            out.push((format!("layer{i}.h0"), &l.h0));
        }
        out.push(("output.w_yo".into(), &self.output.w_yo.data));
        out.push(("output.b_o".into(), &self.output.b_o));
        out
    }

    /// Same order as [`GruNetwork::blocks`].
    pub fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.w_yh.data);
            out.push(&mut l.w_hh.data);
            out.push(&mut l.w_yz.data);
            out.push(&mut l.w_hz.data);
            out.push(&mut l.b_z);
            out.push(&mut l.w_yr.data);
            out.push(&mut l.w_hr.data);
            out.push(&mut l.b_r);
            out.push(&mut l.h0);
        }
        out.push(&mut self.output.w_yo.data);
        out.push(&mut self.output.b_o);
        out
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    /// Sum of squares over all parameters.
    pub fn squared_norm(&self) -> T {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.iter())
            .map(|&v| v * v)
            .sum()
    }

    pub fn scale(&mut self, factor: T) {
        for b in self.blocks_mut() {
            for v in b.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Checks shapes of every block against `dims`.
    pub fn validate_shapes(&self) -> Result<(), GruError> {
        let expected = Self::zeros(self.dims.clone());
        let ok = expected.layers.len() == self.layers.len()
            && expected
                .blocks()
                .iter()
                .zip(self.blocks())
                .all(|((_, a), (_, b))| a.len() == b.len())
            && self
                .layers
                .iter()
                .zip(&expected.layers)
                .all(|(a, b)| a.w_yh.cols == b.w_yh.cols && a.w_hh.cols == b.w_hh.cols)
            && self.output.w_yo.cols == expected.output.w_yo.cols;
        if ok {
            Ok(())
        } else {
            Err(GruError::Shape("parameter blocks do not match dims".into()))
        }
    }

    /// One step of every layer followed by the softmax output.
    pub fn step(&self, state: &NetworkState<T>, x: &[T]) -> Result<StepCache<T>, GruError> {
        if x.len() != self.dims.input {
            return Err(GruError::Shape(format!(
                "input width {} but network expects {}",
                x.len(),
                self.dims.input
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GruError::NonFinite {
                step: None,
                what: "input",
            });
        }
        let mut y: Vec<T> = x.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (layer, h_prev) in self.layers.iter().zip(&state.h) {
            let cache = layer_step(layer, &y, h_prev);
            y.extend_from_slice(&cache.h);
            caches.push(cache);
        }
        let mut logits = self.output.b_o.clone();
        self.output.w_yo.add_mul_vec(&y, &mut logits);
        let (log_probs, probs) = log_softmax(&logits);
        if log_probs.iter().any(|v| !v.is_finite())
            || caches.iter().any(|c| c.h.iter().any(|v| !v.is_finite()))
        {
            return Err(GruError::NonFinite {
                step: None,
                what: "activation",
            });
        }
        Ok(StepCache {
            x: x.to_vec(),
            layers: caches,
            log_probs,
            probs,
        })
    }
}

fn layer_step<T: Scalar>(layer: &GruLayer<T>, y: &[T], h_prev: &[T]) -> LayerCache<T> {
    let n = layer.hidden();
    let mut a_z = layer.b_z.clone();
    layer.w_yz.add_mul_vec(y, &mut a_z);
    layer.w_hz.add_mul_vec(h_prev, &mut a_z);
    let mut a_r = layer.b_r.clone();
    layer.w_yr.add_mul_vec(y, &mut a_r);
    layer.w_hr.add_mul_vec(h_prev, &mut a_r);
    let mut u = vec![T::zero(); n];
    layer.w_hh.add_mul_vec(h_prev, &mut u);
    let mut a_h = vec![T::zero(); n];
    layer.w_yh.add_mul_vec(y, &mut a_h);

    let z: Vec<T> = a_z.into_iter().map(sigmoid).collect();
    let r: Vec<T> = a_r.into_iter().map(sigmoid).collect();
    let h_tilde: Vec<T> = (0..n).map(|k| (a_h[k] + r[k] * u[k]).tanh()).collect();
    let h: Vec<T> = (0..n)
        .map(|k| z[k] * h_prev[k] + (T::one() - z[k]) * h_tilde[k])
        .collect();
    LayerCache {
        h_prev: h_prev.to_vec(),
        z,
        r,
        u,
        h_tilde,
        h,
    }
}

/// Single step: new state, next-token distribution and the cache entry.
pub fn gru_step<T: Scalar>(
    net: &GruNetwork<T>,
    state: &NetworkState<T>,
    x: &[T],
) -> Result<(NetworkState<T>, Vec<T>, StepCache<T>), GruError> {
    let cache = net.step(state, x)?;
    Ok((cache.state(), cache.probs.clone(), cache))
}

/// Runs the network from its initial state over `inputs`.
pub fn forward_sequence<T: Scalar>(
    net: &GruNetwork<T>,
    inputs: &[Vec<T>],
) -> Result<(Vec<Vec<T>>, Tape<T>), GruError> {
    if inputs.is_empty() {
        return Err(GruError::EmptySequence);
    }
    if !net.is_finite() {
        return Err(GruError::NonFinite {
            step: None,
            what: "parameter",
        });
    }
    let mut state = net.initial_state();
    let mut tape = Tape {
        steps: Vec::with_capacity(inputs.len()),
    };
    for (i, x) in inputs.iter().enumerate() {
        let cache = net.step(&state, x).map_err(|e| e.at_step(i))?;
        state = cache.state();
        tape.steps.push(cache);
    }
    let probs = tape.steps.iter().map(|s| s.probs.clone()).collect();
    Ok((probs, tape))
}

fn check_targets<T>(net: &GruNetwork<T>, n: usize, targets: &[usize]) -> Result<(), GruError> {
    if targets.len() != n {
        return Err(GruError::LengthMismatch {
            steps: n,
            targets: targets.len(),
        });
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= net.dims.output) {
        return Err(GruError::Shape(format!(
            "target {t} outside output width {}",
            net.dims.output
        )));
    }
    Ok(())
}

/// Mean negative log-probability of `targets` under the tape's outputs.
pub fn tape_nll<T: Scalar>(tape: &Tape<T>, targets: &[usize]) -> T {
    let sum: T = tape
        .steps
        .iter()
        .zip(targets)
        .map(|(s, &t)| -s.log_probs[t])
        .sum();
    sum / T::lit(tape.len() as f64)
}

/// `-(1/N) Σ log p_n[target_n]`.
pub fn sequence_nll<T: Scalar>(
    net: &GruNetwork<T>,
    inputs: &[Vec<T>],
    targets: &[usize],
) -> Result<T, GruError> {
    check_targets(net, inputs.len(), targets)?;
    let (_, tape) = forward_sequence(net, inputs)?;
    Ok(tape_nll(&tape, targets))
}

/// Exact reverse-mode gradient of [`sequence_nll`] for a recorded tape.
pub fn backward_sequence<T: Scalar>(
    net: &GruNetwork<T>,
    tape: &Tape<T>,
    targets: &[usize],
) -> Result<GruNetwork<T>, GruError> {
    if tape.is_empty() {
        return Err(GruError::EmptySequence);
    }
    check_targets(net, tape.len(), targets)?;
    let inv_n = T::one() / T::lit(tape.len() as f64);
    let dims = &net.dims;
    let num_layers = net.layers.len();
    let mut grad = net.zeros_like();
    let mut carry: Vec<Vec<T>> = dims.hidden.iter().map(|&h| vec![T::zero(); h]).collect();

    for (step, &target) in tape.steps.iter().zip(targets).rev() {
        let mut dlogits: Vec<T> = step.probs.iter().map(|&p| p * inv_n).collect();
        dlogits[target] -= inv_n;

        let y_out = step.layer_input(num_layers);
        grad.output.w_yo.add_outer(&dlogits, &y_out);
        for (g, &d) in grad.output.b_o.iter_mut().zip(&dlogits) {
            *g += d;
        }
        let mut dy_out = vec![T::zero(); y_out.len()];
        net.output.w_yo.add_transpose_mul_vec(&dlogits, &mut dy_out);

        // dh[i]: total gradient into h^i at this step.
        let mut dh = std::mem::take(&mut carry);
        let mut offset = dims.input;
        for (i, d) in dh.iter_mut().enumerate() {
            for (a, &b) in d.iter_mut().zip(&dy_out[offset..offset + dims.hidden[i]]) {
                *a += b;
            }
            offset += dims.hidden[i];
        }

        let mut next_carry: Vec<Vec<T>> = vec![Vec::new(); num_layers];
        for i in (0..num_layers).rev() {
            let layer = &net.layers[i];
            let c = &step.layers[i];
            let g = &mut grad.layers[i];
            let n = layer.hidden();
            let y = step.layer_input(i);

            let mut dh_prev = vec![T::zero(); n];
            let mut da_h = vec![T::zero(); n];
            let mut du = vec![T::zero(); n];
            let mut da_z = vec![T::zero(); n];
            let mut da_r = vec![T::zero(); n];
            for k in 0..n {
                let d = dh[i][k];
                let dz = d * (c.h_prev[k] - c.h_tilde[k]);
                let dh_tilde = d * (T::one() - c.z[k]);
                dh_prev[k] = d * c.z[k];
                da_h[k] = dh_tilde * (T::one() - c.h_tilde[k] * c.h_tilde[k]);
                let dr = da_h[k] * c.u[k];
                du[k] = da_h[k] * c.r[k];
                da_z[k] = dz * c.z[k] * (T::one() - c.z[k]);
                da_r[k] = dr * c.r[k] * (T::one() - c.r[k]);
            }

            g.w_yh.add_outer(&da_h, &y);
            g.w_hh.add_outer(&du, &c.h_prev);
            g.w_yz.add_outer(&da_z, &y);
            g.w_hz.add_outer(&da_z, &c.h_prev);
            g.w_yr.add_outer(&da_r, &y);
            g.w_hr.add_outer(&da_r, &c.h_prev);
            for k in 0..n {
                g.b_z[k] += da_z[k];
                g.b_r[k] += da_r[k];
            }

            layer.w_hh.add_transpose_mul_vec(&du, &mut dh_prev);
            layer.w_hz.add_transpose_mul_vec(&da_z, &mut dh_prev);
            layer.w_hr.add_transpose_mul_vec(&da_r, &mut dh_prev);

            if i > 0 {
                let mut dy = vec![T::zero(); y.len()];
                layer.w_yh.add_transpose_mul_vec(&da_h, &mut dy);
                layer.w_yz.add_transpose_mul_vec(&da_z, &mut dy);
                layer.w_yr.add_transpose_mul_vec(&da_r, &mut dy);
                let mut offset = dims.input;
                for j in 0..i {
                    for (a, &b) in dh[j].iter_mut().zip(&dy[offset..offset + dims.hidden[j]]) {
                        *a += b;
                    }
                    offset += dims.hidden[j];
                }
            }
            next_carry[i] = dh_prev;
        }
        carry = next_carry;
    }
    for (g, c) in grad.layers.iter_mut().zip(carry) {
        g.h0 = c;
    }
    Ok(grad)
}

/// Forward and backward in one call: `(nll, gradient)`.
pub fn nll_and_gradient<T: Scalar>(
    net: &GruNetwork<T>,
    inputs: &[Vec<T>],
    targets: &[usize],
) -> Result<(T, GruNetwork<T>), GruError> {
    check_targets(net, inputs.len(), targets)?;
    let (_, tape) = forward_sequence(net, inputs)?;
    let grad = backward_sequence(net, &tape, targets)?;
    Ok((tape_nll(&tape, targets), grad))
}
