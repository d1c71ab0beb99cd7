//! Small dense networks with hand-rolled reverse-mode differentiation.
//!
//! Parameters of a [`DenseNet`] are addressed as one flat vector: for each
//! layer, the row-major weight matrix (`out × in`) followed by the bias.
//! [`MultiHeadNet`] composes an optional shared trunk with several heads and
//! concatenates their flat vectors in that order.

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
    Softmax,
}

impl Activation {
    fn apply(self, z: &mut [f64]) {
        match self {
            Activation::Tanh => z.iter_mut().for_each(|v| *v = fast_tanh(*v)),
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Identity => {}
            Activation::Softmax => softmax_in_place(z),
        }
    }

    /// Maps the gradient w.r.t. the activation output `y` to the gradient
    /// w.r.t. the pre-activation.
    fn pullback(self, y: &[f64], grad_y: &mut [f64]) {
        match self {
            Activation::Tanh => grad_y
                .iter_mut()
                .zip(y)
                .for_each(|(g, y)| *g *= 1.0 - y * y),
            Activation::Relu => grad_y.iter_mut().zip(y).for_each(|(g, y)| {
                if *y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Identity => {}
            Activation::Softmax => {
                let dot: f64 = grad_y.iter().zip(y).map(|(g, y)| g * y).sum();
                grad_y
                    .iter_mut()
                    .zip(y)
                    .for_each(|(g, y)| *g = y * (*g - dot));
            }
        }
    }
}

/// `tanh` through one `exp`; absolute error below 1e-15 and several times
/// cheaper than the libm routine.
fn fast_tanh(x: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
}

/// Numerically stable softmax.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// One fully connected layer followed by an activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Dense {
    pub fn new(
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != inputs * outputs {
            return Err(Error::Dimension {
                expected: inputs * outputs,
                got: weights.len(),
                context: "layer weights",
            });
        }
        if bias.len() != outputs {
            return Err(Error::Dimension {
                expected: outputs,
                got: bias.len(),
                context: "layer bias",
            });
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs)) {
            *o += dot(row, x);
        }
        self.activation.apply(&mut out);
        out
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        let x: &[f64; 8] = x.try_into().expect("chunk of 8");
        let y: &[f64; 8] = y.try_into().expect("chunk of 8");
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Activations recorded by one forward pass.
#[derive(Debug, Clone)]
pub struct GradientTape {
    generation: u64,
    // activations[0] is the input, activations[l + 1] the output of layer l.
    activations: Vec<Vec<f64>>,
}

impl GradientTape {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }
}

/// A chain of dense layers.
#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<Dense>,
    parameter_count: usize,
    generation: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Structure("network needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Structure(format!(
                    "layer {l} emits {} values but layer {} expects {}",
                    pair[0].outputs,
                    l + 1,
                    pair[1].inputs
                )));
            }
        }
        if layers[..layers.len() - 1]
            .iter()
            .any(|l| l.activation == Activation::Softmax)
        {
            return Err(Error::Structure(
                "softmax is only allowed on the final layer".into(),
            ));
        }
        let parameter_count = layers.iter().map(Dense::parameter_count).sum();
        Ok(Self {
            layers,
            parameter_count,
            generation: next_generation(),
        })
    }

    /// Builds a randomly initialised network. `sizes` lists the input width
    /// followed by each layer's width; `activations` has one entry per layer.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() != activations.len() + 1 {
            return Err(Error::Structure(format!(
                "{} layer sizes need {} activations, got {}",
                sizes.len(),
                sizes.len().saturating_sub(1),
                activations.len()
            )));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Dense::glorot(w[0], w[1], act, rng))
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_count
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.parameter_count);
        for layer in &self.layers {
            v.extend_from_slice(&layer.weights);
            v.extend_from_slice(&layer.bias);
        }
        v
    }

    /// Replaces every parameter; invalidates outstanding tapes.
    pub fn unflatten(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count {
            return Err(Error::Dimension {
                expected: self.parameter_count,
                got: params.len(),
                context: "parameter vector",
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        self.generation = next_generation();
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, GradientTape)> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: input.len(),
                context: "network input",
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for layer in &self.layers {
            let next = layer.forward(activations.last().expect("non-empty"));
            activations.push(next);
        }
        let output = activations.last().expect("non-empty").clone();
        Ok((
            output,
            GradientTape {
                generation: self.generation,
                activations,
            },
        ))
    }

    /// Output only, without keeping a tape.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: input.len(),
                context: "network input",
            });
        }
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer.forward(&x);
        }
        Ok(x)
    }

    /// Gradient of `output · seed` with respect to the flat parameters.
    pub fn backward(&self, tape: &GradientTape, seed: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.parameter_count];
        self.backward_accumulate(tape, seed, &mut grad)?;
        Ok(grad)
    }

    /// Adds the parameter gradient of `output · seed` into `grad` and returns
    /// the gradient with respect to the network input.
    pub fn backward_accumulate(
        &self,
        tape: &GradientTape,
        seed: &[f64],
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        if tape.generation != self.generation {
            return Err(Error::InvalidTape);
        }
        if seed.len() != self.output_dim() {
            return Err(Error::Dimension {
                expected: self.output_dim(),
                got: seed.len(),
                context: "output seed",
            });
        }
        if grad.len() != self.parameter_count {
            return Err(Error::Dimension {
                expected: self.parameter_count,
                got: grad.len(),
                context: "gradient buffer",
            });
        }
        let mut upstream = seed.to_vec();
        let mut end = self.parameter_count;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &tape.activations[l];
            let y = &tape.activations[l + 1];
            layer.activation.pullback(y, &mut upstream);

            let start = end - layer.parameter_count();
            let (gw, gb) = grad[start..end].split_at_mut(layer.weights.len());
            for (o, &dz) in upstream.iter().enumerate() {
                gb[o] += dz;
                if dz != 0.0 {
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter_mut().zip(x).for_each(|(g, x)| *g += dz * x);
                }
            }
            let mut downstream = vec![0.0; layer.inputs];
            for (o, &dz) in upstream.iter().enumerate() {
                if dz != 0.0 {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    downstream
                        .iter_mut()
                        .zip(row)
                        .for_each(|(d, w)| *d += dz * w);
                }
            }
            upstream = downstream;
            end = start;
        }
        Ok(upstream)
    }
}

/// Plain gradient ascent: `params + lr * grad`.
pub fn sgd_step(params: &[f64], grad: &[f64], lr: f64) -> Result<Vec<f64>> {
    let mut out = params.to_vec();
    sgd_step_in_place(&mut out, grad, lr)?;
    Ok(out)
}

pub fn sgd_step_in_place(params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::LearningRate(lr));
    }
    if params.len() != grad.len() {
        return Err(Error::Dimension {
            expected: params.len(),
            got: grad.len(),
            context: "gradient",
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(i));
    }
    params.iter_mut().zip(grad).for_each(|(p, g)| *p += lr * g);
    Ok(())
}

/// Adam moment estimates for gradient ascent with per-coordinate step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Moves `params` along the bias-corrected first moment of `grad`.
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64], lr: &[f64]) -> Result<()> {
        for (len, context) in [(grad.len(), "gradient"), (lr.len(), "learning rates")] {
            if len != params.len() || len != self.m.len() {
                return Err(Error::Dimension {
                    expected: self.m.len(),
                    got: len,
                    context,
                });
            }
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(i));
        }
        if let Some(&bad) = lr.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::LearningRate(bad));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] += lr[i] * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Tapes for one forward pass through a [`MultiHeadNet`].
#[derive(Debug, Clone)]
pub struct MultiTape {
    trunk: Option<GradientTape>,
    heads: Vec<GradientTape>,
}

impl MultiTape {
    pub fn head_output(&self, head: usize) -> &[f64] {
        self.heads[head].output()
    }
}

/// An optional shared trunk feeding several heads.
///
/// Flat layout: trunk parameters, then each head's parameters in order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadNet {
    trunk: Option<DenseNet>,
    heads: Vec<DenseNet>,
}

impl MultiHeadNet {
    pub fn new(trunk: Option<DenseNet>, heads: Vec<DenseNet>) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::Structure("at least one head is required".into()));
        }
        if let Some(t) = &trunk {
            if t.layers.last().map(|l| l.activation) == Some(Activation::Softmax) {
                return Err(Error::Structure("trunk cannot end in softmax".into()));
            }
        }
        let feature_dim = trunk.as_ref().map(DenseNet::output_dim);
        let input_dim = trunk
            .as_ref()
            .map(DenseNet::input_dim)
            .unwrap_or(heads[0].input_dim());
        for (i, h) in heads.iter().enumerate() {
            let expected = feature_dim.unwrap_or(input_dim);
            if h.input_dim() != expected {
                return Err(Error::Structure(format!(
                    "head {i} expects {} inputs, trunk provides {expected}",
                    h.input_dim()
                )));
            }
        }
        Ok(Self { trunk, heads })
    }

    pub fn input_dim(&self) -> usize {
        self.trunk
            .as_ref()
            .map(DenseNet::input_dim)
            .unwrap_or(self.heads[0].input_dim())
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn head(&self, i: usize) -> &DenseNet {
        &self.heads[i]
    }

    pub fn parameter_count(&self) -> usize {
        self.trunk.as_ref().map_or(0, DenseNet::parameter_count)
            + self.heads.iter().map(DenseNet::parameter_count).sum::<usize>()
    }

    pub fn trunk_range(&self) -> Range<usize> {
        0..self.trunk.as_ref().map_or(0, DenseNet::parameter_count)
    }

    pub fn head_range(&self, head: usize) -> Range<usize> {
        let mut start = self.trunk_range().end;
        for h in &self.heads[..head] {
            start += h.parameter_count();
        }
        start..start + self.heads[head].parameter_count()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.parameter_count());
        if let Some(t) = &self.trunk {
            v.extend(t.flatten());
        }
        for h in &self.heads {
            v.extend(h.flatten());
        }
        v
    }

    pub fn unflatten(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::Dimension {
                expected: self.parameter_count(),
                got: params.len(),
                context: "parameter vector",
            });
        }
        let mut offset = 0;
        if let Some(t) = &mut self.trunk {
            let n = t.parameter_count();
            t.unflatten(&params[..n])?;
            offset = n;
        }
        for h in &mut self.heads {
            let n = h.parameter_count();
            h.unflatten(&params[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<MultiTape> {
        let (features, trunk) = match &self.trunk {
            Some(t) => {
                let (f, tape) = t.forward(input)?;
                (f, Some(tape))
            }
            None => (input.to_vec(), None),
        };
        let heads = self
            .heads
            .iter()
            .map(|h| h.forward(&features).map(|(_, tape)| tape))
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiTape { trunk, heads })
    }

    /// Output of one head without recording a tape.
    pub fn predict_head(&self, input: &[f64], head: usize) -> Result<Vec<f64>> {
        match &self.trunk {
            Some(t) => self.heads[head].predict(&t.predict(input)?),
            None => self.heads[head].predict(input),
        }
    }

    /// Adds d(head_output · seed)/d(params) into the full-length `grad`.
    pub fn backward_head_accumulate(
        &self,
        tape: &MultiTape,
        head: usize,
        seed: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        if grad.len() != self.parameter_count() {
            return Err(Error::Dimension {
                expected: self.parameter_count(),
                got: grad.len(),
                context: "gradient buffer",
            });
        }
        let range = self.head_range(head);
        let upstream =
            self.heads[head].backward_accumulate(&tape.heads[head], seed, &mut grad[range])?;
        if let (Some(t), Some(tt)) = (&self.trunk, &tape.trunk) {
            let tr = self.trunk_range();
            t.backward_accumulate(tt, &upstream, &mut grad[tr])?;
        }
        Ok(())
    }

    pub fn backward_head(&self, tape: &MultiTape, head: usize, seed: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.parameter_count()];
        self.backward_head_accumulate(tape, head, seed, &mut grad)?;
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_net(n: usize) -> DenseNet {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        DenseNet::from_layers(vec![
            Dense::new(n, n, w, vec![0.0; n], Activation::Identity).unwrap()
        ])
        .unwrap()
    }

    #[test]
    fn identity_network_passes_input_through() {
        let net = identity_net(3);
        let (y, _) = net.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(y, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn softmax_of_zero_logits_is_uniform() {
        let net = DenseNet::from_layers(vec![Dense::new(
            1,
            2,
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            Activation::Softmax,
        )
        .unwrap()])
        .unwrap();
        let (y, _) = net.forward(&[3.0]).unwrap();
        assert_eq!(y, vec![0.5, 0.5]);
    }

    #[test]
    fn two_layer_tanh_matches_hand_computation() {
        // 2 -> 2 (tanh) -> 1 (tanh)
        let l1 = Dense::new(
            2,
            2,
            vec![0.5, -0.25, 0.1, 0.3],
            vec![0.05, -0.1],
            Activation::Tanh,
        )
        .unwrap();
        let l2 = Dense::new(2, 1, vec![0.7, -1.2], vec![0.2], Activation::Tanh).unwrap();
        let net = DenseNet::from_layers(vec![l1, l2]).unwrap();
        let (y, _) = net.forward(&[1.0, 2.0]).unwrap();
        // h1 = tanh(0.5 - 0.5 + 0.05) = tanh(0.05); h2 = tanh(0.1 + 0.6 - 0.1) = tanh(0.6)
        let h1 = 0.05f64.tanh();
        let h2 = 0.6f64.tanh();
        let expected = (0.7 * h1 - 1.2 * h2 + 0.2).tanh();
        assert!((y[0] - expected).abs() < 1e-15);
        assert!((y[0] - (-0.388_038_385_096_762_3)).abs() < 1e-12);
    }

    #[test]
    fn input_dimension_is_checked() {
        let net = identity_net(2);
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn structure_is_validated() {
        let a = Dense::new(2, 3, vec![0.0; 6], vec![0.0; 3], Activation::Softmax).unwrap();
        let b = Dense::new(3, 1, vec![0.0; 3], vec![0.0], Activation::Identity).unwrap();
        assert!(DenseNet::from_layers(vec![a.clone(), b.clone()]).is_err());
        let c = Dense::new(2, 2, vec![0.0; 4], vec![0.0; 2], Activation::Tanh).unwrap();
        assert!(DenseNet::from_layers(vec![c, b]).is_err());
    }

    #[test]
    fn zero_seed_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(&[3, 5, 2], &[Activation::Tanh, Activation::Softmax], &mut rng)
            .unwrap();
        let (_, tape) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        let g = net.backward(&tape, &[0.0, 0.0]).unwrap();
        assert_eq!(g.len(), net.parameter_count());
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_unit_gradient_is_input_and_one() {
        let net = DenseNet::from_layers(vec![
            Dense::new(1, 1, vec![2.0], vec![0.5], Activation::Identity).unwrap()
        ])
        .unwrap();
        let (_, tape) = net.forward(&[3.0]).unwrap();
        assert_eq!(net.backward(&tape, &[1.0]).unwrap(), vec![3.0, 1.0]);
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut net = identity_net(2);
        let (_, tape) = net.forward(&[1.0, 1.0]).unwrap();
        let p = net.flatten();
        net.unflatten(&p).unwrap();
        assert_eq!(net.backward(&tape, &[1.0, 0.0]), Err(Error::InvalidTape));
    }

    #[test]
    fn sgd_step_arithmetic() {
        assert_eq!(sgd_step(&[1.0, 1.0], &[1.0, -1.0], 0.5).unwrap(), vec![1.5, 0.5]);
        assert_eq!(sgd_step(&[1.0, 2.0], &[0.0, 0.0], 0.1).unwrap(), vec![1.0, 2.0]);
        assert_eq!(
            sgd_step(&[1.0], &[f64::NAN], 0.1),
            Err(Error::NonFiniteGradient(0))
        );
        assert!(sgd_step(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn sgd_ascends_concave_quadratic_to_its_maximum() {
        // J(θ) = -θ², ∇J = -2θ
        let mut theta = vec![3.0];
        for _ in 0..200 {
            let g = vec![-2.0 * theta[0]];
            theta = sgd_step(&theta, &g, 0.1).unwrap();
        }
        assert!(theta[0].abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_has_learning_rate_magnitude() {
        let mut adam = Adam::new(2);
        let mut p = vec![0.0, 0.0];
        adam.ascend(&mut p, &[1e-3, -50.0], &[0.1, 0.01]).unwrap();
        assert!((p[0] - 0.1).abs() < 1e-6);
        assert!((p[1] + 0.01).abs() < 1e-9);
        assert!(adam.ascend(&mut p, &[f64::INFINITY, 0.0], &[0.1, 0.1]).is_err());
    }

    #[test]
    fn adam_ascends_concave_quadratic() {
        let mut adam = Adam::new(1);
        let mut theta = vec![3.0];
        for _ in 0..2000 {
            let g = vec![-2.0 * theta[0]];
            adam.ascend(&mut theta, &g, &[0.05]).unwrap();
        }
        assert!(theta[0].abs() < 1e-2);
    }

    #[test]
    fn multi_head_shares_trunk_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let trunk = DenseNet::new(&[3, 4], &[Activation::Tanh], &mut rng).unwrap();
        let a = DenseNet::new(&[4, 2], &[Activation::Softmax], &mut rng).unwrap();
        let c = DenseNet::new(&[4, 1], &[Activation::Identity], &mut rng).unwrap();
        let net = MultiHeadNet::new(Some(trunk), vec![a, c]).unwrap();
        let tape = net.forward(&[0.3, -0.2, 0.9]).unwrap();
        let g = net.backward_head(&tape, 1, &[1.0]).unwrap();
        assert!(g[net.trunk_range()].iter().any(|v| *v != 0.0));
        assert!(g[net.head_range(0)].iter().all(|v| *v == 0.0));
        let p = net.flatten();
        let mut other = net.clone();
        other.unflatten(&p).unwrap();
        assert_eq!(other.flatten(), p);
    }
}
