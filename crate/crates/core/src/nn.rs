//! Multilayer perceptron blocks, the Adam optimizer, and a finite-difference
//! gradient checker.

use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{matmul, Tensor};
use rand::Rng;

/// Per-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Activation::Identity => v,
        }
    }

    fn apply_taped(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Identity => x,
        }
    }
}

/// One affine layer: `y = act(x W + b)` with `W: [in, out]`, `b: [1, out]`.
#[derive(Debug, Clone)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

/// A plain fully-connected network.
#[derive(Debug, Clone)]
pub struct Mlp {
    /// Checkpoint prefix, e.g. `enc`. Parameter paths are `{name}.l{i}.w`.
    pub name: String,
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// Seeded Gaussian init over the dimension chain `dims`, with `hidden`
    /// activation on all but the last layer and `output` on the last.
    pub fn new<R: Rng>(
        name: &str,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "mlp '{name}' needs at least [in, out] dims, got {dims:?}"
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("mlp '{name}' has a zero dim in {dims:?}")));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            layers.push(Layer {
                weight: Tensor::randn(vec![fan_in, fan_out], std, rng),
                bias: Tensor::zeros(vec![1, fan_out]),
                activation: hidden,
            });
        }
        layers.last_mut().unwrap().activation = output;
        Ok(Mlp { name: name.to_string(), layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.shape()[1]
    }

    /// Single-sample inference without building a graph.
    pub fn run(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Config(format!(
                "mlp '{}' expects input dim {}, got {}",
                self.name,
                self.input_dim(),
                input.len()
            )));
        }
        let mut h = input.to_vec();
        for layer in &self.layers {
            let (fin, fout) = (layer.weight.shape()[0], layer.weight.shape()[1]);
            let mut out = matmul(&h, layer.weight.data(), 1, fin, fout);
            for (o, b) in out.iter_mut().zip(layer.bias.data()) {
                *o = layer.activation.apply(*o + b);
            }
            h = out;
        }
        Ok(h)
    }

    /// Register parameters on the tape as trainable leaves.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        self.bind_inner(tape, true)
    }

    /// Register parameters as constants; gradients stop here.
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundMlp {
        self.bind_inner(tape, false)
    }

    fn bind_inner(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let vars = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.param(l.weight.clone()), tape.param(l.bias.clone()))
                } else {
                    (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
                }
            })
            .collect();
        let acts = self.layers.iter().map(|l| l.activation).collect();
        BoundMlp { vars, acts }
    }

    /// Parameter checkpoint paths in declaration order: `w` then `b` per layer.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.layers.len() * 2);
        for i in 0..self.layers.len() {
            names.push(format!("{}.l{}.w", self.name, i));
            names.push(format!("{}.l{}.b", self.name, i));
        }
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Tape-registered view of an [`Mlp`] for one forward/backward pass.
pub struct BoundMlp {
    vars: Vec<(Var, Var)>,
    acts: Vec<Activation>,
}

impl BoundMlp {
    /// Batched forward: `x` is `[B, in]`, result `[B, out]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for ((w, b), act) in self.vars.iter().zip(&self.acts) {
            let lin = tape.matmul(h, *w);
            let biased = tape.add_row(lin, *b);
            h = act.apply_taped(tape, biased);
        }
        h
    }

    /// Copy gradients from a backward pass into the network's parameter
    /// tensors. Parameters the loss never reached get exact-zero gradients.
    pub fn write_grads(&self, grads: &Gradients, net: &mut Mlp) {
        for ((w, b), layer) in self.vars.iter().zip(net.layers.iter_mut()) {
            let gw = grads
                .get(*w)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; layer.weight.len()]);
            layer.weight.set_grad(gw);
            let gb = grads
                .get(*b)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; layer.bias.len()]);
            layer.bias.set_grad(gb);
        }
    }
}

/// Adam optimizer state shared across a fixed parameter list.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            moments: Vec::new(),
        }
    }

    /// One Adam update with bias correction. `params` must arrive in the same
    /// order on every call; `names` labels them for NaN diagnostics.
    pub fn step(&mut self, params: &mut [&mut Tensor], names: &[String]) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (vec![0.0; p.len()], vec![0.0; p.len()]))
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::Usage(format!(
                "adam state tracks {} parameters, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (idx, param) in params.iter_mut().enumerate() {
            let grad = param.grad().ok_or_else(|| {
                Error::Usage(format!("parameter {} has no gradient", names[idx]))
            })?;
            if let Some(pos) = grad.iter().position(|g| g.is_nan()) {
                return Err(Error::Training(format!(
                    "NaN gradient in parameter {}[{}] at step {}",
                    names[idx], pos, self.step_count
                )));
            }
            let (m, v) = &mut self.moments[idx];
            let grad = grad.to_vec();
            let data = param.data_mut();
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Max relative error between analytic and central finite-difference
/// gradients of `loss = sum(net(input)^2)` over every parameter.
pub fn grad_check(net: &Mlp, input: &[f64], eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Usage(format!("grad_check eps must be in (0, 1e-2], got {eps}")));
    }
    let loss_of = |net: &Mlp| -> Result<f64> {
        let y = net.run(input)?;
        Ok(y.iter().map(|v| v * v).sum())
    };

    // analytic pass
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape);
    let x = tape.constant(Tensor::row(input));
    let y = bound.forward(&mut tape, x);
    let sq = tape.square(y);
    let loss = tape.sum_all(sq);
    let grads = tape.backward(loss)?;
    let mut work = net.clone();
    bound.write_grads(&grads, &mut work);

    fn slot_mut(net: &mut Mlp, li: usize, which: usize, i: usize) -> &mut f64 {
        let layer = &mut net.layers[li];
        let t = if which == 0 { &mut layer.weight } else { &mut layer.bias };
        &mut t.data_mut()[i]
    }

    let mut max_rel = 0.0f64;
    let n_layers = work.layers.len();
    for li in 0..n_layers {
        for which in 0..2 {
            let len = if which == 0 {
                work.layers[li].weight.len()
            } else {
                work.layers[li].bias.len()
            };
            for i in 0..len {
                let analytic = {
                    let layer = &work.layers[li];
                    let t = if which == 0 { &layer.weight } else { &layer.bias };
                    t.grad().unwrap()[i]
                };
                let mut perturbed = work.clone();
                *slot_mut(&mut perturbed, li, which, i) += eps;
                let up = loss_of(&perturbed)?;
                *slot_mut(&mut perturbed, li, which, i) -= 2.0 * eps;
                let down = loss_of(&perturbed)?;
                let numeric = (up - down) / (2.0 * eps);
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                max_rel = max_rel.max((analytic - numeric).abs() / denom);
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn identity_net(dim: usize) -> Mlp {
        let mut eye = Tensor::zeros(vec![dim, dim]);
        for i in 0..dim {
            eye.data_mut()[i * dim + i] = 1.0;
        }
        Mlp {
            name: "id".into(),
            layers: vec![Layer {
                weight: eye,
                bias: Tensor::zeros(vec![1, dim]),
                activation: Activation::Identity,
            }],
        }
    }

    #[test]
    fn identity_net_passes_input_through() {
        let net = identity_net(3);
        assert_eq!(net.run(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn affine_by_hand() {
        // weight [[2]], bias [1], identity: 3 -> 7
        let net = Mlp {
            name: "affine".into(),
            layers: vec![Layer {
                weight: Tensor::matrix(1, 1, vec![2.0]).unwrap(),
                bias: Tensor::matrix(1, 1, vec![1.0]).unwrap(),
                activation: Activation::Identity,
            }],
        };
        assert_eq!(net.run(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn input_dim_mismatch_is_config_error() {
        let net = identity_net(3);
        assert!(matches!(net.run(&[1.0, 2.0]), Err(Error::Config(_))));
    }

    #[test]
    fn forward_matches_explicit_matrix_algebra() {
        let mut rng = stream_rng(11, 0, 0);
        let net = Mlp::new("m", &[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng)
            .unwrap();
        let x = [0.5, -1.0, 0.25];
        let got = net.run(&x).unwrap();

        // straight-line recomputation
        let l0 = &net.layers[0];
        let mut h = vec![0.0; 4];
        for j in 0..4 {
            let mut acc = l0.bias.data()[j];
            for (i, &xv) in x.iter().enumerate() {
                acc += xv * l0.weight.data()[i * 4 + j];
            }
            h[j] = acc.tanh();
        }
        let l1 = &net.layers[1];
        for j in 0..2 {
            let mut acc = l1.bias.data()[j];
            for (i, &hv) in h.iter().enumerate() {
                acc += hv * l1.weight.data()[i * 2 + j];
            }
            assert!((got[j] - acc).abs() < 1e-14);
        }
    }

    #[test]
    fn taped_forward_matches_plain_run() {
        let mut rng = stream_rng(12, 0, 0);
        let net = Mlp::new("m", &[5, 8, 3], Activation::Relu, Activation::Sigmoid, &mut rng)
            .unwrap();
        let x = [0.1, -0.2, 0.3, 1.5, -0.7];
        let plain = net.run(&x).unwrap();
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape);
        let xv = tape.constant(Tensor::row(&x));
        let y = bound.forward(&mut tape, xv);
        let taped = tape.value(y).data();
        for (p, t) in plain.iter().zip(taped) {
            assert!((p - t).abs() < 1e-15);
        }
    }

    #[test]
    fn unreachable_bias_gradient_is_exactly_zero() {
        // relu dead zone: large negative bias on a unit with zero weight keeps
        // the second layer's column unreachable -> loss independent of it
        let mut rng = stream_rng(13, 0, 0);
        let mut net =
            Mlp::new("m", &[2, 3, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        // zero out the last layer's weight row 2 so hidden unit 2 never matters
        net.layers[1].weight.data_mut()[2] = 0.0;
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape);
        let x = tape.constant(Tensor::row(&[1.0, -1.0]));
        let y = bound.forward(&mut tape, x);
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss).unwrap();
        bound.write_grads(&grads, &mut net);
        // bias feeding the dead unit has zero gradient
        assert_eq!(net.layers[0].bias.grad().unwrap()[2], 0.0);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut rng = stream_rng(14, 0, 0);
        let mut net =
            Mlp::new("m", &[2, 2], Activation::Identity, Activation::Identity, &mut rng).unwrap();
        let before = net.layers[0].weight.data().to_vec();
        for p in net.params_mut() {
            let n = p.len();
            p.set_grad(vec![0.0; n]);
        }
        let names = net.param_names();
        let mut adam = AdamState::new(1e-3);
        adam.step(&mut net.params_mut(), &names).unwrap();
        assert_eq!(net.layers[0].weight.data(), &before[..]);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn adam_first_step_magnitude() {
        // single parameter, grad = 1, lr = 1e-4: bias-corrected first step
        // moves by exactly lr / (1 + eps') ~= 1e-4
        let mut net = Mlp {
            name: "p".into(),
            layers: vec![Layer {
                weight: Tensor::matrix(1, 1, vec![0.5]).unwrap(),
                bias: Tensor::zeros(vec![1, 1]),
                activation: Activation::Identity,
            }],
        };
        net.layers[0].weight.set_grad(vec![1.0]);
        net.layers[0].bias.set_grad(vec![0.0]);
        let names = net.param_names();
        let mut adam = AdamState::new(1e-4);
        adam.step(&mut net.params_mut(), &names).unwrap();
        let moved = 0.5 - net.layers[0].weight.data()[0];
        assert!((moved - 1e-4).abs() < 1e-9, "moved {moved}");
    }

    #[test]
    fn adam_descends_monotonically_against_constant_gradient() {
        let mut net = Mlp {
            name: "p".into(),
            layers: vec![Layer {
                weight: Tensor::matrix(1, 1, vec![0.5]).unwrap(),
                bias: Tensor::zeros(vec![1, 1]),
                activation: Activation::Identity,
            }],
        };
        let names = net.param_names();
        let mut adam = AdamState::new(1e-4);
        let mut prev = 0.5;
        for _ in 0..2 {
            net.layers[0].weight.set_grad(vec![1.0]);
            net.layers[0].bias.set_grad(vec![0.0]);
            adam.step(&mut net.params_mut(), &names).unwrap();
            let now = net.layers[0].weight.data()[0];
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn adam_nan_gradient_names_parameter() {
        let mut net = Mlp {
            name: "enc".into(),
            layers: vec![Layer {
                weight: Tensor::matrix(1, 1, vec![0.5]).unwrap(),
                bias: Tensor::zeros(vec![1, 1]),
                activation: Activation::Identity,
            }],
        };
        net.layers[0].weight.set_grad(vec![f64::NAN]);
        net.layers[0].bias.set_grad(vec![0.0]);
        let names = net.param_names();
        let mut adam = AdamState::new(1e-4);
        let err = adam.step(&mut net.params_mut(), &names).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("enc.l0.w"), "got: {msg}");
    }

    #[test]
    fn grad_check_linear_net_is_essentially_exact() {
        let mut rng = stream_rng(15, 0, 0);
        let net = Mlp::new("m", &[3, 4, 2], Activation::Identity, Activation::Identity, &mut rng)
            .unwrap();
        let err = grad_check(&net, &[0.7, -0.3, 1.1], 1e-4).unwrap();
        assert!(err < 1e-8, "linear net grad error {err}");
    }

    #[test]
    fn grad_check_tanh_and_sigmoid_nets() {
        let mut rng = stream_rng(16, 0, 0);
        let tanh_net =
            Mlp::new("t", &[4, 6, 5, 2], Activation::Tanh, Activation::Identity, &mut rng)
                .unwrap();
        let err = grad_check(&tanh_net, &[0.2, -0.5, 0.9, 0.1], 1e-4).unwrap();
        assert!(err < 1e-4, "tanh net grad error {err}");

        let sig_net =
            Mlp::new("s", &[3, 5, 2], Activation::Sigmoid, Activation::Sigmoid, &mut rng).unwrap();
        let err = grad_check(&sig_net, &[0.4, 0.6, -0.8], 1e-4).unwrap();
        assert!(err < 1e-4, "sigmoid net grad error {err}");
    }

    #[test]
    fn grad_check_rejects_bad_eps() {
        let mut rng = stream_rng(17, 0, 0);
        let net = Mlp::new("m", &[2, 2], Activation::Identity, Activation::Identity, &mut rng)
            .unwrap();
        assert!(grad_check(&net, &[1.0, 1.0], 0.0).is_err());
        assert!(grad_check(&net, &[1.0, 1.0], 0.5).is_err());
    }
}
