//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! An [`Mlp`] holds the weights and biases of one network plus its shape
//! metadata; hidden layers are ReLU, the output layer is linear, sigmoid,
//! or tanh. [`Mlp::backward`] returns exact gradients of
//! `<output, cotangent>` with respect to every parameter *and* the input,
//! which is how gradients flow through a frozen critic into the actor and
//! aimer.
//!
//! Shape mismatches on the hot path (`forward`/`backward`) are programmer
//! error and panic via `assert!`; construction and optimizer steps are
//! shape-checked and return `Result`.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Activation applied to every hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiddenActivation {
    Relu,
}

/// Activation applied to the output layer only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Linear,
    Sigmoid,
    Tanh,
}

impl OutputActivation {
    fn apply<F: Scalar>(self, z: F) -> F {
        match self {
            OutputActivation::Linear => z,
            OutputActivation::Sigmoid => F::one() / (F::one() + (-z).exp()),
            OutputActivation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the post-activation value `y`.
    fn derivative_from_output<F: Scalar>(self, y: F) -> F {
        match self {
            OutputActivation::Linear => F::one(),
            OutputActivation::Sigmoid => y * (F::one() - y),
            OutputActivation::Tanh => F::one() - y * y,
        }
    }
}

/// Weights, biases, and shape metadata of one dense network.
///
/// `weights[l]` is row-major with shape `(layer_sizes[l+1], layer_sizes[l])`;
/// `biases[l]` has length `layer_sizes[l+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<F>>,
    biases: Vec<Vec<F>>,
    hidden_activation: HiddenActivation,
    output_activation: OutputActivation,
}

/// Per-layer parameter gradients plus the gradient with respect to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<F> {
    pub d_weights: Vec<Vec<F>>,
    pub d_biases: Vec<Vec<F>>,
    pub d_input: Vec<F>,
}

/// Forward-pass record needed by [`Mlp::backward`]: post-activations per
/// layer (`activations[0]` is the input) and pre-activations per layer.
#[derive(Debug, Clone)]
pub struct Trace<F> {
    pub activations: Vec<Vec<F>>,
    pub preactivations: Vec<Vec<F>>,
}

impl<F: Scalar> Trace<F> {
    pub fn output(&self) -> &[F] {
        self.activations.last().expect("trace has layers")
    }

    /// Pre-activations of the output layer (used by the actor's
    /// pre-activation penalty).
    pub fn output_preactivation(&self) -> &[F] {
        self.preactivations.last().expect("trace has layers")
    }
}

impl<F: Scalar> Mlp<F> {
    /// Glorot-uniform initialization with zero biases, deterministic in
    /// `seed`: weights drawn from U(-b, b) with b = sqrt(6/(fan_in+fan_out)).
    pub fn init(
        layer_sizes: &[usize],
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
        seed: u64,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 layer sizes, got {}",
                layer_sizes.len()
            )));
        }
        if layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::Config("layer sizes must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for l in 0..layer_sizes.len() - 1 {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let bound = F::from_f64((6.0 / (fan_in + fan_out) as f64).sqrt());
            let dist = Uniform::new(-bound, bound);
            let w: Vec<F> = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
            weights.push(w);
            biases.push(vec![F::zero(); fan_out]);
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden_activation,
            output_activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn hidden_activation(&self) -> HiddenActivation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn weights(&self) -> &[Vec<F>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<F>] {
        &self.biases
    }

    /// Raw parameter access for checkpoint loading; shapes must match.
    pub fn set_layer(&mut self, l: usize, weights: Vec<F>, biases: Vec<F>) -> Result<()> {
        let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        if weights.len() != fan_in * fan_out || biases.len() != fan_out {
            return Err(Error::Shape(format!(
                "layer {l}: expected {}x{} weights and {} biases, got {} and {}",
                fan_out,
                fan_in,
                fan_out,
                weights.len(),
                biases.len()
            )));
        }
        self.weights[l] = weights;
        self.biases[l] = biases;
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().flatten().all(|v| v.is_finite())
            && self.biases.iter().flatten().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.layer_sizes == other.layer_sizes
    }

    /// Plain forward pass; output length equals the last layer size.
    pub fn forward(&self, input: &[F]) -> Vec<F> {
        assert_eq!(
            input.len(),
            self.layer_sizes[0],
            "input length {} != first layer size {}",
            input.len(),
            self.layer_sizes[0]
        );
        let mut a = input.to_vec();
        let last = self.num_layers() - 1;
        for l in 0..=last {
            let z = self.affine(l, &a);
            a = self.activate(l == last, z);
        }
        a
    }

    /// Forward pass that records everything [`Mlp::backward`] needs.
    pub fn forward_trace(&self, input: &[F]) -> Trace<F> {
        assert_eq!(
            input.len(),
            self.layer_sizes[0],
            "input length {} != first layer size {}",
            input.len(),
            self.layer_sizes[0]
        );
        let last = self.num_layers() - 1;
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        let mut preactivations = Vec::with_capacity(self.num_layers());
        activations.push(input.to_vec());
        for l in 0..=last {
            let z = self.affine(l, activations.last().unwrap());
            let a = self.activate(l == last, z.clone());
            preactivations.push(z);
            activations.push(a);
        }
        Trace {
            activations,
            preactivations,
        }
    }

    fn affine(&self, l: usize, input: &[F]) -> Vec<F> {
        let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let w = &self.weights[l];
        let mut z = self.biases[l].clone();
        for (row, zr) in z.iter_mut().enumerate() {
            let base = row * fan_in;
            let mut acc = F::zero();
            for (k, x) in input.iter().enumerate() {
                acc = acc + w[base + k] * *x;
            }
            *zr += acc;
        }
        debug_assert_eq!(z.len(), fan_out);
        z
    }

    fn activate(&self, is_output: bool, mut z: Vec<F>) -> Vec<F> {
        if is_output {
            for v in &mut z {
                *v = self.output_activation.apply(*v);
            }
        } else {
            match self.hidden_activation {
                HiddenActivation::Relu => {
                    for v in &mut z {
                        if *v < F::zero() {
                            *v = F::zero();
                        }
                    }
                }
            }
        }
        z
    }

    /// Exact reverse-mode gradients of `<output, cotangent>` with respect to
    /// all parameters and the input.
    pub fn backward(&self, trace: &Trace<F>, cotangent: &[F]) -> Gradient<F> {
        let mut grad = Gradient::zeros(self);
        self.backward_acc(trace, cotangent, None, &mut grad);
        grad
    }

    /// Accumulating backward pass. `extra_output_preact_cotangent`, when
    /// present, is added to the output layer's pre-activation cotangent
    /// (needed for penalties defined on pre-activations, where routing the
    /// term through the post-activation cotangent would divide by a
    /// saturating derivative).
    pub fn backward_acc(
        &self,
        trace: &Trace<F>,
        cotangent: &[F],
        extra_output_preact_cotangent: Option<&[F]>,
        grad: &mut Gradient<F>,
    ) {
        let last = self.num_layers() - 1;
        assert_eq!(
            cotangent.len(),
            self.layer_sizes[last + 1],
            "cotangent length {} != output size {}",
            cotangent.len(),
            self.layer_sizes[last + 1]
        );

        // dz for the output layer.
        let y = &trace.activations[last + 1];
        let mut dz: Vec<F> = cotangent
            .iter()
            .zip(y.iter())
            .map(|(&c, &yi)| c * self.output_activation.derivative_from_output(yi))
            .collect();
        if let Some(extra) = extra_output_preact_cotangent {
            assert_eq!(extra.len(), dz.len(), "preactivation cotangent length");
            for (d, &e) in dz.iter_mut().zip(extra.iter()) {
                *d += e;
            }
        }

        for l in (0..=last).rev() {
            let fan_in = self.layer_sizes[l];
            let a_in = &trace.activations[l];
            let dw = &mut grad.d_weights[l];
            for (row, &d) in dz.iter().enumerate() {
                let base = row * fan_in;
                for (k, &x) in a_in.iter().enumerate() {
                    dw[base + k] += d * x;
                }
                grad.d_biases[l][row] += d;
            }
            // Cotangent for the previous layer's activations.
            let w = &self.weights[l];
            let mut da = vec![F::zero(); fan_in];
            for (row, &d) in dz.iter().enumerate() {
                let base = row * fan_in;
                for (k, dak) in da.iter_mut().enumerate() {
                    *dak += w[base + k] * d;
                }
            }
            if l == 0 {
                for (g, &d) in grad.d_input.iter_mut().zip(da.iter()) {
                    *g += d;
                }
            } else {
                // ReLU mask of the previous hidden layer.
                let z_prev = &trace.preactivations[l - 1];
                dz = da
                    .iter()
                    .zip(z_prev.iter())
                    .map(|(&d, &z)| if z > F::zero() { d } else { F::zero() })
                    .collect();
            }
        }
    }
}

impl<F: Scalar> Gradient<F> {
    pub fn zeros(params: &Mlp<F>) -> Self {
        Gradient {
            d_weights: params.weights.iter().map(|w| vec![F::zero(); w.len()]).collect(),
            d_biases: params.biases.iter().map(|b| vec![F::zero(); b.len()]).collect(),
            d_input: vec![F::zero(); params.layer_sizes[0]],
        }
    }

    pub fn scale(&mut self, factor: F) {
        for w in &mut self.d_weights {
            for v in w {
                *v *= factor;
            }
        }
        for b in &mut self.d_biases {
            for v in b {
                *v *= factor;
            }
        }
        for v in &mut self.d_input {
            *v *= factor;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.d_weights.iter().flatten().all(|v| v.is_finite())
            && self.d_biases.iter().flatten().all(|v| v.is_finite())
            && self.d_input.iter().all(|v| v.is_finite())
    }
}

/// Adam optimizer state; moment buffers mirror the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub step_count: u64,
    pub learning_rate: F,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    m_weights: Vec<Vec<F>>,
    m_biases: Vec<Vec<F>>,
    v_weights: Vec<Vec<F>>,
    v_biases: Vec<Vec<F>>,
}

impl<F: Scalar> AdamState<F> {
    /// Defaults matching the usual Adam configuration: lr 1e-3, beta1 0.9,
    /// beta2 0.999, epsilon 1e-8.
    pub fn new(params: &Mlp<F>, learning_rate: F) -> Self {
        AdamState {
            step_count: 0,
            learning_rate,
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.999),
            epsilon: F::from_f64(1e-8),
            m_weights: params.weights.iter().map(|w| vec![F::zero(); w.len()]).collect(),
            m_biases: params.biases.iter().map(|b| vec![F::zero(); b.len()]).collect(),
            v_weights: params.weights.iter().map(|w| vec![F::zero(); w.len()]).collect(),
            v_biases: params.biases.iter().map(|b| vec![F::zero(); b.len()]).collect(),
        }
    }

    /// Moment buffers in (m_weights, m_biases, v_weights, v_biases) order,
    /// for serialization.
    pub fn moment_buffers(&self) -> (&[Vec<F>], &[Vec<F>], &[Vec<F>], &[Vec<F>]) {
        (&self.m_weights, &self.m_biases, &self.v_weights, &self.v_biases)
    }

    /// Rebuild a state from serialized parts; buffer shapes are checked
    /// against `params`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        params: &Mlp<F>,
        step_count: u64,
        learning_rate: F,
        beta1: F,
        beta2: F,
        epsilon: F,
        m_weights: Vec<Vec<F>>,
        m_biases: Vec<Vec<F>>,
        v_weights: Vec<Vec<F>>,
        v_biases: Vec<Vec<F>>,
    ) -> Result<Self> {
        let n = params.weights.len();
        let shapes_match = m_weights.len() == n
            && v_weights.len() == n
            && m_biases.len() == n
            && v_biases.len() == n
            && (0..n).all(|l| {
                m_weights[l].len() == params.weights[l].len()
                    && v_weights[l].len() == params.weights[l].len()
                    && m_biases[l].len() == params.biases[l].len()
                    && v_biases[l].len() == params.biases[l].len()
            });
        if !shapes_match {
            return Err(Error::Shape("adam moment buffers do not match parameters".into()));
        }
        Ok(AdamState {
            step_count,
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m_weights,
            m_biases,
            v_weights,
            v_biases,
        })
    }

    /// One Adam step with bias correction. Non-finite gradients reject the
    /// step and signal divergence; the parameters are left untouched.
    pub fn step(&mut self, params: &mut Mlp<F>, grad: &Gradient<F>) -> Result<()> {
        if grad.d_weights.len() != params.weights.len() {
            return Err(Error::Shape("gradient layer count != parameter layer count".into()));
        }
        for l in 0..params.weights.len() {
            if grad.d_weights[l].len() != params.weights[l].len()
                || grad.d_biases[l].len() != params.biases[l].len()
            {
                return Err(Error::Shape(format!("gradient shape mismatch at layer {l}")));
            }
        }
        if !grad.all_finite() {
            return Err(Error::Divergence("non-finite gradient in adam step".into()));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = F::one() - self.beta1.powi(t);
        let bc2 = F::one() - self.beta2.powi(t);
        let one = F::one();

        for l in 0..params.weights.len() {
            Self::update_buffer(
                &mut params.weights[l],
                &grad.d_weights[l],
                &mut self.m_weights[l],
                &mut self.v_weights[l],
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
                one,
            );
            Self::update_buffer(
                &mut params.biases[l],
                &grad.d_biases[l],
                &mut self.m_biases[l],
                &mut self.v_biases[l],
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
                one,
            );
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn update_buffer(
        p: &mut [F],
        g: &[F],
        m: &mut [F],
        v: &mut [F],
        lr: F,
        beta1: F,
        beta2: F,
        eps: F,
        bc1: F,
        bc2: F,
        one: F,
    ) {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (one - beta1) * g[i];
            v[i] = beta2 * v[i] + (one - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Target-network averaging: `target = decay * target + (1 - decay) * online`
/// elementwise. `decay` is the retained fraction of the target.
pub fn polyak_update<F: Scalar>(target: &mut Mlp<F>, online: &Mlp<F>, decay: F) -> Result<()> {
    if !target.same_shape(online) {
        return Err(Error::Shape("polyak_update: shapes differ".into()));
    }
    if decay < F::zero() || decay > F::one() {
        return Err(Error::Config(format!("polyak decay {decay} outside [0, 1]")));
    }
    let blend = F::one() - decay;
    for l in 0..target.weights.len() {
        for (t, &o) in target.weights[l].iter_mut().zip(online.weights[l].iter()) {
            *t = decay * *t + blend * o;
        }
        for (t, &o) in target.biases[l].iter_mut().zip(online.biases[l].iter()) {
            *t = decay * *t + blend * o;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    fn small_net(seed: u64, sizes: &[usize], out: OutputActivation) -> Mlp<f64> {
        Mlp::init(sizes, HiddenActivation::Relu, out, seed).unwrap()
    }

    /// Independent oracle: central finite differences of <forward(x), cot>
    /// over every parameter and input coordinate.
    fn finite_difference(net: &Mlp<f64>, input: &[f64], cot: &[f64], h: f64) -> Gradient<f64> {
        let eval = |n: &Mlp<f64>, x: &[f64]| -> f64 {
            n.forward(x).iter().zip(cot.iter()).map(|(y, c)| y * c).sum()
        };
        let mut fd = Gradient::zeros(net);
        for l in 0..net.num_layers() {
            for i in 0..net.weights[l].len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                plus.weights[l][i] += h;
                minus.weights[l][i] -= h;
                fd.d_weights[l][i] = (eval(&plus, input) - eval(&minus, input)) / (2.0 * h);
            }
            for i in 0..net.biases[l].len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                plus.biases[l][i] += h;
                minus.biases[l][i] -= h;
                fd.d_biases[l][i] = (eval(&plus, input) - eval(&minus, input)) / (2.0 * h);
            }
        }
        for i in 0..input.len() {
            let mut plus = input.to_vec();
            let mut minus = input.to_vec();
            plus[i] += h;
            minus[i] -= h;
            fd.d_input[i] = (eval(net, &plus) - eval(net, &minus)) / (2.0 * h);
        }
        fd
    }

    fn max_rel_err(a: &Gradient<f64>, b: &Gradient<f64>) -> f64 {
        let rel = |x: f64, y: f64| {
            let denom = x.abs().max(y.abs()).max(1.0);
            (x - y).abs() / denom
        };
        let mut worst: f64 = 0.0;
        for l in 0..a.d_weights.len() {
            for (x, y) in a.d_weights[l].iter().zip(b.d_weights[l].iter()) {
                worst = worst.max(rel(*x, *y));
            }
            for (x, y) in a.d_biases[l].iter().zip(b.d_biases[l].iter()) {
                worst = worst.max(rel(*x, *y));
            }
        }
        for (x, y) in a.d_input.iter().zip(b.d_input.iter()) {
            worst = worst.max(rel(*x, *y));
        }
        worst
    }

    #[test]
    fn init_shapes_and_zero_biases() {
        let net = small_net(0, &[60, 256, 30], OutputActivation::Linear);
        assert_eq!(net.weights()[0].len(), 256 * 60);
        assert_eq!(net.weights()[1].len(), 30 * 256);
        assert!(net.biases().iter().flatten().all(|&b| b == 0.0));
    }

    #[test]
    fn init_is_deterministic() {
        let a = small_net(42, &[4, 8, 2], OutputActivation::Tanh);
        let b = small_net(42, &[4, 8, 2], OutputActivation::Tanh);
        assert_eq!(a, b);
        let c = small_net(43, &[4, 8, 2], OutputActivation::Tanh);
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(Mlp::<f64>::init(&[3], HiddenActivation::Relu, OutputActivation::Linear, 0).is_err());
        assert!(Mlp::<f64>::init(&[3, 0, 2], HiddenActivation::Relu, OutputActivation::Linear, 0).is_err());
    }

    #[test]
    fn zero_net_forward() {
        let mut net = small_net(0, &[3, 2], OutputActivation::Linear);
        net.set_layer(0, vec![0.0; 6], vec![0.0; 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]), vec![0.0, 0.0]);
        let mut sig = small_net(0, &[3, 2], OutputActivation::Sigmoid);
        sig.set_layer(0, vec![0.0; 6], vec![0.0; 2]).unwrap();
        assert_eq!(sig.forward(&[1.0, -2.0, 3.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn one_layer_affine() {
        let mut net = small_net(0, &[1, 1], OutputActivation::Linear);
        net.set_layer(0, vec![2.0], vec![1.0]).unwrap();
        assert_eq!(net.forward(&[3.0]), vec![7.0]);
    }

    #[test]
    fn one_layer_backward_by_hand() {
        let mut net = small_net(0, &[1, 1], OutputActivation::Linear);
        net.set_layer(0, vec![2.0], vec![1.0]).unwrap();
        let trace = net.forward_trace(&[3.0]);
        let grad = net.backward(&trace, &[1.0]);
        assert_eq!(grad.d_weights[0], vec![3.0]);
        assert_eq!(grad.d_biases[0], vec![1.0]);
        assert_eq!(grad.d_input, vec![2.0]);
    }

    #[test]
    fn zero_cotangent_zero_gradient() {
        let net = small_net(5, &[4, 6, 3], OutputActivation::Tanh);
        let trace = net.forward_trace(&[0.3, -0.4, 0.9, 0.1]);
        let grad = net.backward(&trace, &[0.0, 0.0, 0.0]);
        assert_eq!(grad, Gradient::zeros(&net));
    }

    #[test]
    fn gradients_match_finite_differences() {
        // Random small nets across output activations; relative error < 1e-6.
        for (seed, out) in [
            (1, OutputActivation::Linear),
            (2, OutputActivation::Sigmoid),
            (3, OutputActivation::Tanh),
        ] {
            let net = small_net(seed, &[5, 11, 7, 2], out);
            let mut stream = SeedStream::derive(seed, &[77]);
            let input: Vec<f64> = (0..5).map(|_| stream.uniform(-1.0, 1.0)).collect();
            let cot: Vec<f64> = (0..2).map(|_| stream.uniform(-1.0, 1.0)).collect();
            let trace = net.forward_trace(&input);
            let analytic = net.backward(&trace, &cot);
            let fd = finite_difference(&net, &input, &cot, 1e-5);
            assert!(
                max_rel_err(&analytic, &fd) < 1e-6,
                "seed {seed}: rel err {}",
                max_rel_err(&analytic, &fd)
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences_f32_instantiation() {
        // The kernel is generic; check the f32 path at a looser tolerance.
        let net: Mlp<f32> =
            Mlp::init(&[3, 8, 2], HiddenActivation::Relu, OutputActivation::Linear, 9).unwrap();
        let input = [0.3f32, -0.2, 0.7];
        let cot = [1.0f32, -0.5];
        let trace = net.forward_trace(&input);
        let grad = net.backward(&trace, &cot);
        let h = 1e-2f32;
        let eval = |n: &Mlp<f32>, x: &[f32]| -> f32 {
            n.forward(x).iter().zip(cot.iter()).map(|(y, c)| y * c).sum()
        };
        let mut plus = net.clone();
        let mut minus = net.clone();
        plus.weights[0][0] += h;
        minus.weights[0][0] -= h;
        let fd = (eval(&plus, &input) - eval(&minus, &input)) / (2.0 * h);
        assert!((fd - grad.d_weights[0][0]).abs() < 1e-2);
    }

    #[test]
    fn preactivation_cotangent_injection() {
        // d/dz of sum(z^2) at the output layer, checked against finite
        // differences of the penalty through the affine parameters.
        let net = small_net(4, &[3, 6, 2], OutputActivation::Tanh);
        let input = [0.2, -0.7, 0.4];
        let trace = net.forward_trace(&input);
        let z = trace.output_preactivation().to_vec();
        let extra: Vec<f64> = z.iter().map(|&v| 2.0 * v).collect();
        let mut grad = Gradient::zeros(&net);
        net.backward_acc(&trace, &[0.0, 0.0], Some(&extra), &mut grad);

        let penalty = |n: &Mlp<f64>| -> f64 {
            let t = n.forward_trace(&input);
            t.output_preactivation().iter().map(|v| v * v).sum()
        };
        let h = 1e-6;
        let l = net.num_layers() - 1;
        for i in 0..net.weights[l].len() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            plus.weights[l][i] += h;
            minus.weights[l][i] -= h;
            let fd = (penalty(&plus) - penalty(&minus)) / (2.0 * h);
            assert!((fd - grad.d_weights[l][i]).abs() < 1e-5);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut net = small_net(6, &[2, 3, 1], OutputActivation::Linear);
        let before = net.clone();
        let zero_grad = Gradient::zeros(&net);
        let mut adam = AdamState::new(&net, 0.001);
        adam.step(&mut net, &zero_grad).unwrap();
        assert_eq!(net, before);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn adam_first_step_magnitude() {
        // Scalar parameter 0, gradient 1: first bias-corrected step moves by
        // -lr * 1/(1 + eps) which is -0.001 up to 1e-11.
        let mut net = small_net(0, &[1, 1], OutputActivation::Linear);
        net.set_layer(0, vec![0.0], vec![0.0]).unwrap();
        let mut adam = AdamState::new(&net, 0.001);
        let mut grad = Gradient::zeros(&net);
        grad.d_weights[0][0] = 1.0;
        adam.step(&mut net, &grad).unwrap();
        assert!((net.weights()[0][0] + 0.001).abs() < 1e-9);
        assert_eq!(net.biases()[0][0], 0.0);
    }

    #[test]
    fn adam_is_deterministic() {
        let net = small_net(8, &[3, 4, 2], OutputActivation::Linear);
        let trace = net.forward_trace(&[0.1, 0.2, 0.3]);
        let grad = net.backward(&trace, &[1.0, -1.0]);
        let mut n1 = net.clone();
        let mut n2 = net.clone();
        let mut a1 = AdamState::new(&net, 0.01);
        let mut a2 = AdamState::new(&net, 0.01);
        a1.step(&mut n1, &grad).unwrap();
        a2.step(&mut n2, &grad).unwrap();
        assert_eq!(n1, n2);
        assert_eq!(a1, a2);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut net = small_net(0, &[1, 1], OutputActivation::Linear);
        let before = net.clone();
        let mut adam = AdamState::new(&net, 0.001);
        let mut grad = Gradient::zeros(&net);
        grad.d_weights[0][0] = f64::NAN;
        assert!(matches!(adam.step(&mut net, &grad), Err(Error::Divergence(_))));
        assert_eq!(net, before);
        assert_eq!(adam.step_count, 0);
    }

    #[test]
    fn polyak_blends_and_degenerate_cases() {
        let online = {
            let mut n = small_net(0, &[1, 1], OutputActivation::Linear);
            n.set_layer(0, vec![0.0], vec![0.0]).unwrap();
            n
        };
        let fresh_target = || {
            let mut n = small_net(0, &[1, 1], OutputActivation::Linear);
            n.set_layer(0, vec![1.0], vec![1.0]).unwrap();
            n
        };

        let mut t = fresh_target();
        polyak_update(&mut t, &online, 0.95).unwrap();
        assert!((t.weights()[0][0] - 0.95).abs() < 1e-15);

        let mut t = fresh_target();
        polyak_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t.weights()[0][0], 1.0);

        let mut t = fresh_target();
        polyak_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t, online);
    }

    #[test]
    fn polyak_is_contraction_toward_online() {
        let online = small_net(10, &[3, 5, 2], OutputActivation::Linear);
        let mut target = small_net(11, &[3, 5, 2], OutputActivation::Linear);
        let decay = 0.95;
        let before: Vec<f64> = target.weights()[0]
            .iter()
            .zip(online.weights()[0].iter())
            .map(|(t, o)| (t - o).abs())
            .collect();
        polyak_update(&mut target, &online, decay).unwrap();
        for (i, (t, o)) in target.weights()[0].iter().zip(online.weights()[0].iter()).enumerate() {
            assert!((t - o).abs() <= decay * before[i] + 1e-15);
        }
    }

    #[test]
    fn polyak_rejects_shape_mismatch() {
        let online = small_net(0, &[2, 2], OutputActivation::Linear);
        let mut target = small_net(0, &[2, 3], OutputActivation::Linear);
        assert!(polyak_update(&mut target, &online, 0.5).is_err());
    }

    #[test]
    #[should_panic(expected = "input length")]
    fn forward_panics_on_dimension_mismatch() {
        let net = small_net(0, &[3, 2], OutputActivation::Linear);
        net.forward(&[1.0, 2.0]);
    }
}
