//! Central finite-difference checks of taped gradients.
//!
//! Relative error is `|a - n| / max(|a|, |n|, REL_FLOOR)`; the floor keeps
//! gradients that are zero up to rounding from producing meaningless ratios.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Parameter, Tape, Var};
use crate::channel::{power_normalize, sample_noise, sigma2_from_snr_db};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ProductAe};
use crate::nn::{Fcnn, FcnnShape};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Where the worst error occurred.
    pub worst: String,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            checked: 0,
            max_rel_err: 0.0,
            worst: String::new(),
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, at: impl FnOnce() -> String) {
        self.checked += 1;
        let e = relative_error(analytic, numeric);
        if e > self.max_rel_err || e.is_nan() {
            self.max_rel_err = e;
            self.worst = at();
        }
    }

    fn absorb(&mut self, other: CheckResult) {
        self.checked += other.checked;
        if other.max_rel_err > self.max_rel_err || other.max_rel_err.is_nan() {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

/// Reduce `out` to a scalar with fixed random weights so every output
/// element contributes a distinct gradient.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let numel: usize = tape.shape(out).iter().product();
    if numel == 1 && tape.shape(out).is_empty() {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = tape.constant(Tensor::new([numel, 1], w)?);
    let flat = tape.reshape(out, &[1, numel])?;
    let y = tape.matmul(flat, w)?;
    Ok(tape.sum(y))
}

/// Check the gradient of `f` with respect to every element of every input.
pub fn check_op<F>(name: &str, inputs: &[Tensor<f64>], seed: u64, f: F) -> Result<CheckResult>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let loss = project(&mut tape, out, seed)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.input(v.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let loss = project(&mut tape, out, seed)?;
    let grads = tape.backward(loss)?;

    let mut result = CheckResult::new(name);
    let mut values = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape().to_vec()));
        for e in 0..inputs[i].numel() {
            let x = inputs[i].data()[e];
            values[i].data_mut()[e] = x + FD_STEP;
            let plus = eval(&values)?;
            values[i].data_mut()[e] = x - FD_STEP;
            let minus = eval(&values)?;
            values[i].data_mut()[e] = x;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            result.record(analytic.data()[e], numeric, || {
                format!("input {i} element {e}")
            });
        }
    }
    Ok(result)
}

/// Models whose parameters can be listed in a stable order.
pub trait ParamSet {
    fn param_list(&self) -> Vec<&Parameter<f64>>;
    fn param_list_mut(&mut self) -> Vec<&mut Parameter<f64>>;
}

impl ParamSet for Fcnn<f64> {
    fn param_list(&self) -> Vec<&Parameter<f64>> {
        self.params().collect()
    }

    fn param_list_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        self.params_mut().collect()
    }
}

impl ParamSet for ProductAe<f64> {
    fn param_list(&self) -> Vec<&Parameter<f64>> {
        self.params().collect()
    }

    fn param_list_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        self.params_mut().collect()
    }
}

/// Check `loss` gradients for a random subset of `samples` scalar entries
/// of the model's parameters.
pub fn check_params<M, L>(
    model: &mut M,
    samples: usize,
    seed: u64,
    name: &str,
    loss: L,
) -> Result<CheckResult>
where
    M: ParamSet,
    L: Fn(&M, &mut Tape<f64>) -> Result<Var>,
{
    for p in model.param_list_mut() {
        p.set_requires_grad(true);
    }
    let eval = |model: &M| -> Result<f64> {
        let mut tape = Tape::new();
        let l = loss(model, &mut tape)?;
        Ok(tape.value(l).item())
    };
    let grads = {
        let mut tape = Tape::new();
        let l = loss(model, &mut tape)?;
        if !tape.shape(l).is_empty() {
            return Err(Error::Contract("gradient check loss must be scalar".into()));
        }
        let grads = tape.backward(l)?;
        model
            .param_list()
            .iter()
            .map(|p| {
                grads
                    .param(p.id())
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.value().shape().to_vec()))
            })
            .collect::<Vec<_>>()
    };

    let mut offsets = Vec::with_capacity(grads.len());
    let mut total = 0;
    for g in &grads {
        offsets.push(total);
        total += g.numel();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, total, samples.min(total)).into_vec();
    picks.sort_unstable();

    let mut result = CheckResult::new(name);
    let set = |model: &mut M, pi: usize, e: usize, x: f64| {
        model.param_list_mut()[pi].value_mut().data_mut()[e] = x;
    };
    for flat in picks {
        let pi = offsets.partition_point(|&o| o <= flat) - 1;
        let e = flat - offsets[pi];
        let x = model.param_list()[pi].value().data()[e];
        set(model, pi, e, x + FD_STEP);
        let plus = eval(model)?;
        set(model, pi, e, x - FD_STEP);
        let minus = eval(model)?;
        set(model, pi, e, x);
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        result.record(grads[pi].data()[e], numeric, || {
            format!("parameter {pi} element {e}")
        });
    }
    Ok(result)
}

/// Small model used for end-to-end gradient checks: (3,2)², I=2, F=2,
/// hidden width 8.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        n1: 3,
        k1: 2,
        n2: 3,
        k2: 2,
        iterations: 2,
        features: 2,
        enc_hidden_layers: 2,
        enc_hidden_width: 8,
        dec_hidden_layers: 2,
        dec_hidden_width: 8,
        dec_last_hidden_layers: 2,
    }
}

/// End-to-end check of the training loss of a freshly initialized `config`
/// model, biases randomized, on a fixed random batch at 1 dB.
pub fn check_model(config: &ModelConfig, samples: usize, seed: u64) -> Result<CheckResult> {
    let mut model = ProductAe::<f64>::new(*config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xB));
    // Zero biases put every all-zero message row exactly on the SELU kink,
    // where central differences straddle two slopes. Move off it.
    for p in model.params_mut().filter(|p| p.value().rank() == 1) {
        p.value_mut()
            .data_mut()
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.1..0.1));
    }
    let batch = 4;
    let bits = (0..batch * config.k())
        .map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 })
        .collect();
    let u = Tensor::new([batch, config.k2, config.k1], bits)?;
    let sigma = sigma2_from_snr_db(1.0).sqrt();
    let noise: Tensor<f64> = sample_noise(&mut rng, &[batch, config.n2, config.n1], &[sigma])?;

    let names = model.param_names();
    let mut r = check_params(
        &mut model,
        samples,
        derive_seed(seed, 0xC),
        "productae",
        |m, tape| {
            let (_, loss) = m.forward_loss(tape, &u, &noise)?;
            Ok(loss)
        },
    )?;
    if let Some(idx) = r
        .worst
        .strip_prefix("parameter ")
        .and_then(|w| w.split(' ').next()?.parse::<usize>().ok())
    {
        r.worst = format!("{} ({})", names[idx], r.worst);
    }
    Ok(r)
}

/// Gradient checks for every differentiable tape operation on random
/// inputs, `trials` draws per operation. Returns one result per operation.
pub fn check_ops(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results: Vec<CheckResult> = Vec::new();
    for trial in 0..trials {
        let s = derive_seed(seed, trial as u64);
        let rand = |rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64| -> Tensor<f64> {
            let n = shape.iter().product();
            Tensor::new(
                shape.to_vec(),
                (0..n).map(|_| rng.random_range(lo..hi)).collect(),
            )
            .unwrap()
        };
        // Keep SELU inputs away from its kink at zero.
        let away = |rng: &mut ChaCha8Rng, shape: &[usize]| -> Tensor<f64> {
            let n = shape.iter().product();
            let data = (0..n)
                .map(|_| {
                    let m: f64 = rng.random_range(0.01..3.0);
                    if rng.random() {
                        m
                    } else {
                        -m
                    }
                })
                .collect();
            Tensor::new(shape.to_vec(), data).unwrap()
        };
        let bits = |rng: &mut ChaCha8Rng, shape: &[usize]| -> Tensor<f64> {
            let n = shape.iter().product();
            Tensor::new(
                shape.to_vec(),
                (0..n)
                    .map(|_| if rng.random() { 1.0 } else { 0.0 })
                    .collect(),
            )
            .unwrap()
        };

        let mut batch = Vec::new();
        batch.push(check_op(
            "matmul",
            &[
                rand(&mut rng, &[3, 4], -1., 1.),
                rand(&mut rng, &[4, 2], -1., 1.),
            ],
            s,
            |t, v| t.matmul(v[0], v[1]),
        )?);
        batch.push(check_op(
            "matmul_batched",
            &[
                rand(&mut rng, &[2, 3, 4], -1., 1.),
                rand(&mut rng, &[4, 2], -1., 1.),
            ],
            s,
            |t, v| t.matmul(v[0], v[1]),
        )?);
        batch.push(check_op(
            "add_bias",
            &[
                rand(&mut rng, &[2, 3, 4], -1., 1.),
                rand(&mut rng, &[4], -1., 1.),
            ],
            s,
            |t, v| t.add_bias(v[0], v[1]),
        )?);
        batch.push(check_op(
            "add",
            &[
                rand(&mut rng, &[3, 2], -1., 1.),
                rand(&mut rng, &[3, 2], -1., 1.),
            ],
            s,
            |t, v| t.add(v[0], v[1]),
        )?);
        batch.push(check_op(
            "sub",
            &[
                rand(&mut rng, &[3, 2], -1., 1.),
                rand(&mut rng, &[3, 2], -1., 1.),
            ],
            s,
            |t, v| t.sub(v[0], v[1]),
        )?);
        let c: f64 = rng.random_range(-2.0..2.0);
        batch.push(check_op(
            "scale",
            &[rand(&mut rng, &[5], -1., 1.)],
            s,
            |t, v| Ok(t.scale(v[0], c)),
        )?);
        batch.push(check_op(
            "add_scalar",
            &[rand(&mut rng, &[5], -1., 1.)],
            s,
            |t, v| Ok(t.add_scalar(v[0], c)),
        )?);
        batch.push(check_op("selu", &[away(&mut rng, &[2, 5])], s, |t, v| {
            Ok(t.selu(v[0]))
        })?);
        let mut r = rand(&mut rng, &[6], 0.5, 2.0);
        r.data_mut().iter_mut().step_by(2).for_each(|x| *x = -*x);
        batch.push(check_op("recip", &[r], s, |t, v| Ok(t.recip(v[0])))?);
        batch.push(check_op(
            "scale_by",
            &[
                rand(&mut rng, &[3, 4], -1., 1.),
                rand(&mut rng, &[3], -1., 1.),
            ],
            s,
            |t, v| t.scale_by(v[0], v[1]),
        )?);
        batch.push(check_op(
            "sum",
            &[rand(&mut rng, &[2, 3], -1., 1.)],
            s,
            |t, v| Ok(t.sum(v[0])),
        )?);
        batch.push(check_op(
            "mean",
            &[rand(&mut rng, &[2, 3], -1., 1.)],
            s,
            |t, v| Ok(t.mean(v[0])),
        )?);
        let targets = bits(&mut rng, &[3, 4]);
        batch.push(check_op(
            "bce_with_logits",
            &[rand(&mut rng, &[3, 4], -4., 4.)],
            s,
            move |t, v| {
                let y = t.constant(targets.clone());
                t.bce_with_logits(v[0], y)
            },
        )?);
        batch.push(check_op(
            "concat",
            &[
                rand(&mut rng, &[2, 3], -1., 1.),
                rand(&mut rng, &[2, 2], -1., 1.),
            ],
            s,
            |t, v| t.concat(&[v[0], v[1]], 1),
        )?);
        batch.push(check_op(
            "permute",
            &[rand(&mut rng, &[2, 3, 4], -1., 1.)],
            s,
            |t, v| t.permute(v[0], &[2, 0, 1]),
        )?);
        batch.push(check_op(
            "transpose",
            &[rand(&mut rng, &[2, 3, 4], -1., 1.)],
            s,
            |t, v| t.transpose(v[0]),
        )?);
        batch.push(check_op(
            "reshape",
            &[rand(&mut rng, &[2, 6], -1., 1.)],
            s,
            |t, v| t.reshape(v[0], &[3, 4]),
        )?);
        batch.push(check_op(
            "slice",
            &[rand(&mut rng, &[3, 5], -1., 1.)],
            s,
            |t, v| t.slice(v[0], 1, 1, 3),
        )?);
        batch.push(check_op(
            "l2_norm",
            &[rand(&mut rng, &[3, 4], -1., 1.)],
            s,
            |t, v| t.l2_norm(v[0], 1),
        )?);
        batch.push(check_op(
            "power_normalize",
            &[rand(&mut rng, &[2, 6], -1., 1.)],
            s,
            |t, v| power_normalize(t, v[0]),
        )?);
        let net = Fcnn::<f64>::new(FcnnShape::new(4, 3, 1, 16), s)?;
        batch.push(check_op(
            "fcnn_forward",
            &[rand(&mut rng, &[5, 4], -1., 1.)],
            s,
            |t, v| net.forward(t, v[0]),
        )?);

        if results.is_empty() {
            results = batch;
        } else {
            for (acc, r) in results.iter_mut().zip(batch) {
                acc.absorb(r);
            }
        }
    }
    Ok(results)
}

/// Parameter gradients of a 4-16-3 network.
pub fn check_fcnn_params(seed: u64) -> Result<CheckResult> {
    let mut net = Fcnn::<f64>::new(FcnnShape::new(4, 3, 1, 16), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let x = Tensor::new(
        [5, 4],
        (0..20).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let total = net.param_count();
    check_params(&mut net, total, seed, "fcnn_params", |n, tape| {
        let xv = tape.constant(x.clone());
        let out = n.forward(tape, xv)?;
        project(tape, out, seed)
    })
}
