//! Fully-connected networks and the Adam optimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Affine map `x W + b` with `W: [in, out]`, `b: [out]`.
#[derive(Clone, Debug)]
pub struct DenseLayer<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Real> DenseLayer<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Parameter::new(Tensor::zeros([in_dim, out_dim])),
            bias: Parameter::new(Tensor::zeros([out_dim])),
        }
    }

    pub fn from_tensors(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 2 || bias.shape() != [ws[1]] {
            return Err(Error::shapes("dense layer", ws, bias.shape()));
        }
        Ok(Self {
            weight: Parameter::new(weight),
            bias: Parameter::new(bias),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value().shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value().shape()[1]
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        let h = tape.matmul(x, w)?;
        tape.add_bias(h, b)
    }
}

/// Geometry of a fully-connected network: `hidden_layers` SELU layers of
/// `hidden_width` units followed by an affine output layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FcnnShape {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl FcnnShape {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        hidden_layers: usize,
        hidden_width: usize,
    ) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden_layers,
            hidden_width,
        }
    }

    /// `(in, out)` of every layer, input side first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.output_dim == 0
            || (self.hidden_layers > 0 && self.hidden_width == 0)
        {
            return Err(Error::Config(format!("degenerate network shape {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Fcnn<T> {
    shape: FcnnShape,
    layers: Vec<DenseLayer<T>>,
}

impl<T: Real> Fcnn<T> {
    /// A network initialized from `seed` (see [`Fcnn::init_weights`]).
    pub fn new(shape: FcnnShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let layers = shape
            .layer_dims()
            .into_iter()
            .map(|(i, o)| DenseLayer::zeros(i, o))
            .collect();
        let mut net = Self { shape, layers };
        net.init_weights(seed);
        Ok(net)
    }

    /// Build from explicit layers; all but the last get SELU.
    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Config("network needs a layer".into()))?;
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::dim(
                    "fcnn",
                    format!(
                        "layer widths {} -> {} do not chain",
                        pair[0].out_dim(),
                        pair[1].in_dim()
                    ),
                ));
            }
        }
        let hidden_layers = layers.len() - 1;
        let shape = FcnnShape {
            input_dim: first.in_dim(),
            output_dim: layers[hidden_layers].out_dim(),
            hidden_layers,
            hidden_width: if hidden_layers > 0 {
                first.out_dim()
            } else {
                0
            },
        };
        Ok(Self { shape, layers })
    }

    pub fn shape(&self) -> FcnnShape {
        self.shape
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    /// LeCun-uniform weights (`U(-a, a)` with std `1/sqrt(fan_in)`), zero
    /// biases. Deterministic in `seed`.
    pub fn init_weights(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            let fan_in = layer.in_dim() as f64;
            let bound = (3.0 / fan_in).sqrt();
            for w in layer.weight.value_mut().data_mut() {
                *w = T::lit(rng.random_range(-bound..bound));
            }
            layer
                .bias
                .value_mut()
                .data_mut()
                .iter_mut()
                .for_each(|b| *b = T::zero());
        }
    }

    /// Apply the network along the trailing axis of `x`.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let trailing = tape.shape(x).last().copied();
        if trailing != Some(self.shape.input_dim) {
            return Err(Error::dim(
                "fcnn_forward",
                format!(
                    "trailing dimension of {:?} does not match network input {}",
                    tape.shape(x),
                    self.shape.input_dim
                ),
            ));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i < last {
                h = tape.selu(h);
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|p| p.value().numel()).sum()
    }
}

pub fn zero_grad<'a, T: Real>(params: impl IntoIterator<Item = &'a mut Parameter<T>>) {
    params.into_iter().for_each(Parameter::zero_grad);
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    /// A zero rate is accepted and turns steps into no-ops.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "Adam learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "Adam betas must lie in [0, 1): {self:?}"
            )));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config(format!(
                "Adam eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter, in the
/// order the parameters are passed to [`Adam::step`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step_count: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new<'a>(
        config: AdamConfig,
        params: impl IntoIterator<Item = &'a Parameter<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let (m, v) = params
            .into_iter()
            .map(|p| {
                let z = Tensor::zeros(p.value().shape().to_vec());
                (z.clone(), z)
            })
            .unzip();
        Ok(Self {
            config,
            step_count: 0,
            m,
            v,
        })
    }

    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Parameter<T>>,
    ) -> Result<()> {
        self.config.validate()?;
        let params: Vec<&mut Parameter<T>> = params.into_iter().collect();
        if params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, step got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (p, m) in params.iter().zip(&self.m) {
            if p.value().shape() != m.shape() {
                return Err(Error::shapes("adam_step", p.value().shape(), m.shape()));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
        let (lr, eps, bc1, bc2) = (T::lit(lr), T::lit(eps), T::lit(bc1), T::lit(bc2));
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            let (value, grad) = p.value_and_grad_mut();
            for (((x, &g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(shape: FcnnShape, seed: u64) -> Fcnn<f64> {
        Fcnn::new(shape, seed).unwrap()
    }

    #[test]
    fn identity_net_passes_input_through() {
        let w = Tensor::<f64>::from_f64([3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let net = Fcnn::from_layers(vec![
            DenseLayer::from_tensors(w, Tensor::zeros([3])).unwrap()
        ])
        .unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_f64([2, 3], &[1., -2., 3., 0.5, 0., -1.]).unwrap());
        let y = net.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn encoder_geometry_shapes() {
        // (B, k2, k1) -> (B, k2, n1)
        let net = tiny(FcnnShape::new(10, 15, 2, 16), 1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([4, 10, 10]));
        let y = net.forward(&mut tape, x).unwrap();
        assert_eq!(tape.shape(y), &[4, 10, 15]);
        let bad = tape.constant(Tensor::zeros([4, 10, 9]));
        assert!(matches!(
            net.forward(&mut tape, bad),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn layer_count_and_widths() {
        let net = tiny(FcnnShape::new(4, 3, 7, 16), 0);
        assert_eq!(net.layers().len(), 8);
        assert!(net.layers()[..7].iter().all(|l| l.out_dim() == 16));
        assert_eq!(net.layers()[7].out_dim(), 3);
    }

    #[test]
    fn init_is_seeded() {
        let shape = FcnnShape::new(5, 4, 2, 8);
        let a = tiny(shape, 7);
        let b = tiny(shape, 7);
        let c = tiny(shape, 8);
        let vals = |n: &Fcnn<f64>| {
            n.params()
                .flat_map(|p| p.value().data().to_vec())
                .collect::<Vec<_>>()
        };
        assert_eq!(vals(&a), vals(&b));
        assert_ne!(vals(&a), vals(&c));
        assert!(a
            .layers()
            .iter()
            .all(|l| l.bias.value().data().iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_std_matches_fan_in() {
        let net = tiny(FcnnShape::new(100, 100, 0, 0), 3);
        let w = net.layers()[0].weight.value().data();
        assert_eq!(w.len(), 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let target = 1.0 / 100f64.sqrt();
        assert!(
            (var.sqrt() - target).abs() < 0.2 * target,
            "std {}",
            var.sqrt()
        );
    }

    fn scalar_param(x: f64) -> Parameter<f64> {
        Parameter::new(Tensor::from_f64([1], &[x]).unwrap())
    }

    fn set_grad(p: &mut Parameter<f64>, g: f64) {
        let mut tape = Tape::new();
        let w = tape.param(p);
        let w = tape.scale(w, g);
        let s = tape.sum(w);
        let grads = tape.backward(s).unwrap();
        p.zero_grad();
        p.accumulate(&grads);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = scalar_param(1.0);
        set_grad(&mut p, 1.0);
        let mut adam = Adam::new(AdamConfig::with_lr(2e-4), [&p]).unwrap();
        adam.step([&mut p]).unwrap();
        // m_hat = 1, v_hat = 1 -> delta = lr / (1 + eps)
        let expected = 1.0 - 2e-4 / (1.0 + 1e-8);
        assert!((p.value().item() - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_grad_and_zero_lr_are_noops() {
        let mut p = scalar_param(0.25);
        let mut adam = Adam::new(AdamConfig::with_lr(1e-2), [&p]).unwrap();
        adam.step([&mut p]).unwrap();
        assert_eq!(p.value().item(), 0.25);

        set_grad(&mut p, 3.0);
        let mut frozen = Adam::new(AdamConfig::with_lr(0.0), [&p]).unwrap();
        for _ in 0..5 {
            frozen.step([&mut p]).unwrap();
        }
        assert_eq!(p.value().item(), 0.25);
    }

    #[test]
    fn adam_equal_grads_update_identically() {
        let mut a = scalar_param(0.5);
        let mut b = scalar_param(0.5);
        set_grad(&mut a, -0.3);
        set_grad(&mut b, -0.3);
        let mut adam = Adam::new(AdamConfig::with_lr(1e-3), [&a, &b]).unwrap();
        adam.step([&mut a, &mut b]).unwrap();
        assert_eq!(a.value().item(), b.value().item());
    }

    #[test]
    fn adam_rejects_negative_lr() {
        let p = scalar_param(0.0);
        assert!(matches!(
            Adam::new(AdamConfig::with_lr(-1e-3), [&p]),
            Err(Error::Config(_))
        ));
    }
}
