//! Neural product encoder and iterative neural product decoder.
//!
//! Tensors are laid out `[batch, rows, cols]` with the message `U` as
//! `[B, k2, k1]` and the codeword as `[B, n2, n1]`. "Row orientation"
//! means the trailing axis runs along dimension 1 (length `n1`/`k1`);
//! "column orientation" is the transposed layout `[B, n1, n2]`.
//!
//! The decoder runs `2I` networks in the order
//! `D2(1), D1(1), D2(2), D1(2), ..., D2(I), D1(I)`, i.e. columns first.
//! Each intermediate network emits `F` soft vectors packed contiguously
//! (`F` blocks of length `m`). Before the next network the blocks are
//! re-oriented, concatenated feature-major, and the raw channel slice for
//! the new orientation is appended last. From the third network on, the
//! soft block handed forward is the increment `output - soft input` of
//! the previous network, taken in that network's orientation. The first
//! network sees only the channel, the second gets the first network's
//! output directly, and the last sees only the previous output (no
//! channel, no subtraction).

use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameter, Tape, Var};
use crate::channel::power_normalize;
use crate::classical::ProductCodeParams;
use crate::error::{Error, Result};
use crate::nn::{Fcnn, FcnnShape};
use crate::real::Real;
use crate::rng::derive_seed;
use crate::tensor::Tensor;

/// Geometry and network sizes of a 2D ProductAE.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n1: usize,
    pub k1: usize,
    pub n2: usize,
    pub k2: usize,
    /// Decoding iterations `I`; the decoder has `2I` networks.
    pub iterations: usize,
    /// Soft feature vectors `F` exchanged between decoders.
    pub features: usize,
    pub enc_hidden_layers: usize,
    pub enc_hidden_width: usize,
    pub dec_hidden_layers: usize,
    pub dec_hidden_width: usize,
    /// Hidden layers of the last decoder pair.
    pub dec_last_hidden_layers: usize,
}

impl ModelConfig {
    /// ProductAE (15,10)²: I=4, F=3, encoders 7x200, decoders 7x250, last pair 9x250.
    pub fn reference_15_10() -> Self {
        Self::reference(15, 10)
    }

    /// ProductAE (21,14)² with the same network sizes.
    pub fn reference_21_14() -> Self {
        Self::reference(21, 14)
    }

    fn reference(n: usize, k: usize) -> Self {
        Self {
            n1: n,
            k1: k,
            n2: n,
            k2: k,
            iterations: 4,
            features: 3,
            enc_hidden_layers: 7,
            enc_hidden_width: 200,
            dec_hidden_layers: 7,
            dec_hidden_width: 250,
            dec_last_hidden_layers: 9,
        }
    }

    /// ProductAE (7,4)² sized to train on one CPU core.
    pub fn desk() -> Self {
        Self {
            n1: 7,
            k1: 4,
            n2: 7,
            k2: 4,
            iterations: 2,
            features: 2,
            enc_hidden_layers: 3,
            enc_hidden_width: 64,
            dec_hidden_layers: 3,
            dec_hidden_width: 64,
            dec_last_hidden_layers: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.n1,
            self.k1,
            self.n2,
            self.k2,
            self.iterations,
            self.features,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!(
                "geometry, iterations and features must be positive: {self:?}"
            )));
        }
        if self.k1 > self.n1 || self.k2 > self.n2 {
            return Err(Error::Config(format!(
                "component dimensions must satisfy k <= n, got ({}, {}) and ({}, {})",
                self.n1, self.k1, self.n2, self.k2
            )));
        }
        let widths = [
            (self.enc_hidden_layers, self.enc_hidden_width),
            (self.dec_hidden_layers, self.dec_hidden_width),
            (self.dec_last_hidden_layers, self.dec_hidden_width),
        ];
        if widths.iter().any(|&(l, w)| l > 0 && w == 0) {
            return Err(Error::Config(
                "hidden width must be positive when hidden layers are used".into(),
            ));
        }
        Ok(())
    }

    pub fn code_params(&self) -> ProductCodeParams {
        ProductCodeParams::two_d(self.n1, self.k1, self.n2, self.k2).expect("validated geometry")
    }

    pub fn n(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn k(&self) -> usize {
        self.k1 * self.k2
    }

    pub fn rate(&self) -> f64 {
        self.k() as f64 / self.n() as f64
    }

    pub fn encoder_shapes(&self) -> [FcnnShape; 2] {
        let (l, w) = (self.enc_hidden_layers, self.enc_hidden_width);
        [
            FcnnShape::new(self.k1, self.n1, l, w),
            FcnnShape::new(self.k2, self.n2, l, w),
        ]
    }

    /// Network shapes for decoders `t = 1..=2I`, in execution order.
    pub fn decoder_shapes(&self) -> Vec<FcnnShape> {
        let f = self.features;
        (1..=2 * self.iterations)
            .map(|t| {
                let last = t.div_ceil(2) == self.iterations;
                let hidden = if last {
                    self.dec_last_hidden_layers
                } else {
                    self.dec_hidden_layers
                };
                let (input, output) = if t % 2 == 1 {
                    let input = if t == 1 { self.n2 } else { (f + 1) * self.n2 };
                    let output = if last { f * self.k2 } else { f * self.n2 };
                    (input, output)
                } else if last {
                    (f * self.n1, self.k1)
                } else {
                    ((f + 1) * self.n1, f * self.n1)
                };
                FcnnShape::new(input, output, hidden, self.dec_hidden_width)
            })
            .collect()
    }
}

/// Row encoder `E1: k1 -> n1` followed by column encoder `E2: k2 -> n2`.
#[derive(Clone, Debug)]
pub struct ProductEncoder<T> {
    pub enc1: Fcnn<T>,
    pub enc2: Fcnn<T>,
    params: ProductCodeParams,
}

impl<T: Real> ProductEncoder<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let [s1, s2] = config.encoder_shapes();
        Self::from_nets(
            Fcnn::new(s1, derive_seed(seed, 1))?,
            Fcnn::new(s2, derive_seed(seed, 2))?,
        )
    }

    pub fn from_nets(enc1: Fcnn<T>, enc2: Fcnn<T>) -> Result<Self> {
        let (a, b) = (enc1.shape(), enc2.shape());
        let params =
            ProductCodeParams::two_d(a.output_dim, a.input_dim, b.output_dim, b.input_dim)?;
        Ok(Self { enc1, enc2, params })
    }

    pub fn code_params(&self) -> &ProductCodeParams {
        &self.params
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        let (c1, c2) = (self.params.component(0), self.params.component(1));
        (c1.n, c1.k, c2.n, c2.k)
    }

    /// Both encoders without power normalization: `[B, k2, k1] -> [B, n2, n1]`.
    pub fn encode_raw(&self, tape: &mut Tape<T>, u: Var) -> Result<Var> {
        let (_, k1, _, k2) = self.dims();
        let shape = tape.shape(u);
        if shape.len() != 3 || shape[1] != k2 || shape[2] != k1 {
            return Err(Error::dim(
                "encode",
                format!("message shape {shape:?} does not match [B, {k2}, {k1}]"),
            ));
        }
        let rows = self.enc1.forward(tape, u)?;
        let cols = tape.transpose(rows)?;
        let coded = self.enc2.forward(tape, cols)?;
        tape.transpose(coded)
    }

    /// Encode and normalize each flattened length-`n` codeword to energy `n`.
    pub fn encode(&self, tape: &mut Tape<T>, u: Var) -> Result<Var> {
        let (n1, _, n2, _) = self.dims();
        let raw = self.encode_raw(tape, u)?;
        let batch = tape.shape(raw)[0];
        let flat = tape.reshape(raw, &[batch, n1 * n2])?;
        let normalized = power_normalize(tape, flat)?;
        tape.reshape(normalized, &[batch, n2, n1])
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.enc1.params().chain(self.enc2.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.enc1.params_mut().chain(self.enc2.params_mut())
    }
}

/// What one decoder stage saw and produced, for inspection.
#[derive(Clone, Copy, Debug)]
pub struct StageRecord {
    /// 1-based position in the decoder chain.
    pub t: usize,
    /// The `F`-feature soft block given to this stage (absent for `t = 1`).
    pub soft_in: Option<Var>,
    /// The channel slice appended to the input (absent for `t = 2I`).
    pub channel: Option<Var>,
    pub input: Var,
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct ProductDecoder<T> {
    config: ModelConfig,
    nets: Vec<Fcnn<T>>,
}

impl<T: Real> ProductDecoder<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let nets = config
            .decoder_shapes()
            .into_iter()
            .enumerate()
            .map(|(t, shape)| Fcnn::new(shape, derive_seed(seed, 100 + t as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: *config,
            nets,
        })
    }

    pub fn from_nets(config: &ModelConfig, nets: Vec<Fcnn<T>>) -> Result<Self> {
        config.validate()?;
        let expected = config.decoder_shapes();
        if nets.len() != expected.len() {
            return Err(Error::dim(
                "decoder",
                format!("{} networks given, {} required", nets.len(), expected.len()),
            ));
        }
        for (t, (net, want)) in nets.iter().zip(&expected).enumerate() {
            let got = net.shape();
            if (got.input_dim, got.output_dim) != (want.input_dim, want.output_dim) {
                return Err(Error::dim(
                    "decoder",
                    format!("stage t={} has {got:?}, expected {want:?}", t + 1),
                ));
            }
        }
        Ok(Self {
            config: *config,
            nets,
        })
    }

    pub fn nets(&self) -> &[Fcnn<T>] {
        &self.nets
    }

    pub fn iterations(&self) -> usize {
        self.config.iterations
    }

    pub fn feature_size(&self) -> usize {
        self.config.features
    }

    pub fn decode(&self, tape: &mut Tape<T>, y: Var) -> Result<Var> {
        self.decode_traced(tape, y).map(|(logits, _)| logits)
    }

    /// Decode `[B, n2, n1]` channel output to `[B, k2, k1]` logits, also
    /// returning a record per stage.
    pub fn decode_traced(&self, tape: &mut Tape<T>, y: Var) -> Result<(Var, Vec<StageRecord>)> {
        let ModelConfig {
            n1,
            n2,
            features: f,
            ..
        } = self.config;
        let shape = tape.shape(y).to_vec();
        if shape.len() != 3 || shape[1] != n2 || shape[2] != n1 {
            return Err(Error::dim(
                "decode",
                format!("stage t=1: channel shape {shape:?} does not match [B, {n2}, {n1}]"),
            ));
        }
        let batch = shape[0];
        let y_rows = y;
        let y_cols = tape.transpose(y)?;
        let stages = self.nets.len();
        let mut records = Vec::with_capacity(stages);

        let first = self.run_stage(tape, 1, y_cols)?;
        records.push(StageRecord {
            t: 1,
            soft_in: None,
            channel: Some(y_cols),
            input: y_cols,
            output: first,
        });

        for t in 2..=stages {
            let prev = records[t - 2];
            let handed = if t == 2 || t == stages {
                prev.output
            } else {
                let soft = prev
                    .soft_in
                    .expect("stages after the first have soft input");
                tape.sub(prev.output, soft).map_err(|e| stage_error(t, e))?
            };
            let soft_in = reorient(tape, handed, batch, f).map_err(|e| stage_error(t, e))?;
            let (input, channel) = if t == stages {
                (soft_in, None)
            } else {
                let channel = if t % 2 == 0 { y_rows } else { y_cols };
                let joined = tape
                    .concat(&[soft_in, channel], 2)
                    .map_err(|e| stage_error(t, e))?;
                (joined, Some(channel))
            };
            let output = self.run_stage(tape, t, input)?;
            records.push(StageRecord {
                t,
                soft_in: Some(soft_in),
                channel,
                input,
                output,
            });
        }
        Ok((records[stages - 1].output, records))
    }

    fn run_stage(&self, tape: &mut Tape<T>, t: usize, input: Var) -> Result<Var> {
        self.nets[t - 1]
            .forward(tape, input)
            .map_err(|e| stage_error(t, e))
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.nets.iter().flat_map(|n| n.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.nets.iter_mut().flat_map(|n| n.params_mut())
    }
}

fn stage_error(t: usize, e: Error) -> Error {
    match e {
        Error::Dimension { op, detail } if !detail.starts_with("stage") => Error::Dimension {
            op,
            detail: format!("stage t={t}: {detail}"),
        },
        other => other,
    }
}

/// `[B, a, F*m]` in one orientation to `[B, m, F*a]` in the other, keeping
/// feature blocks contiguous.
fn reorient<T: Real>(tape: &mut Tape<T>, x: Var, batch: usize, features: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (a, width) = (shape[1], shape[2]);
    if width % features != 0 {
        return Err(Error::dim(
            "decode",
            format!("soft output width {width} is not a multiple of F={features}"),
        ));
    }
    let m = width / features;
    let split = tape.reshape(x, &[batch, a, features, m])?;
    let swapped = tape.permute(split, &[0, 3, 2, 1])?;
    tape.reshape(swapped, &[batch, m, features * a])
}

/// Which parameter group a training step updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Encoder,
    Decoder,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Encoder => "encoder",
            Role::Decoder => "decoder",
        })
    }
}

/// Encoder and decoder of one ProductAE.
#[derive(Clone, Debug)]
pub struct ProductAe<T> {
    config: ModelConfig,
    pub encoder: ProductEncoder<T>,
    pub decoder: ProductDecoder<T>,
}

impl<T: Real> ProductAe<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Self {
            config,
            encoder: ProductEncoder::new(&config, derive_seed(seed, 0xE))?,
            decoder: ProductDecoder::new(&config, derive_seed(seed, 0xD))?,
        }
        .check()
    }

    pub fn from_parts(
        config: ModelConfig,
        encoder: ProductEncoder<T>,
        decoder: ProductDecoder<T>,
    ) -> Result<Self> {
        Self {
            config,
            encoder,
            decoder,
        }
        .check()
    }

    fn check(self) -> Result<Self> {
        let want = self.config.code_params();
        if want.components != self.encoder.code_params().components {
            return Err(Error::Config(
                "encoder geometry does not match model config".into(),
            ));
        }
        Ok(self)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn rate(&self) -> f64 {
        self.config.rate()
    }

    /// Normalized codewords for a `[B, k2, k1]` message batch.
    pub fn transmit(&self, tape: &mut Tape<T>, u: Var) -> Result<Var> {
        self.encoder.encode(tape, u)
    }

    /// Encode, add the given noise, decode, and score against `u`.
    /// Returns `(logits, loss)`.
    pub fn forward_loss(
        &self,
        tape: &mut Tape<T>,
        u: &Tensor<T>,
        noise: &Tensor<T>,
    ) -> Result<(Var, Var)> {
        let u = tape.constant(u.clone());
        let c = self.encoder.encode(tape, u)?;
        let n = tape.constant(noise.clone());
        let y = tape.add(c, n)?;
        let logits = self.decoder.decode(tape, y)?;
        let loss = tape.bce_with_logits(logits, u)?;
        Ok((logits, loss))
    }

    /// Turn gradient tracking on for `role`'s parameters and off for the rest.
    pub fn train_only(&mut self, role: Role) {
        let enc = role == Role::Encoder;
        self.encoder
            .params_mut()
            .for_each(|p| p.set_requires_grad(enc));
        self.decoder
            .params_mut()
            .for_each(|p| p.set_requires_grad(!enc));
    }

    pub fn set_all_trainable(&mut self) {
        self.encoder
            .params_mut()
            .for_each(|p| p.set_requires_grad(true));
        self.decoder
            .params_mut()
            .for_each(|p| p.set_requires_grad(true));
    }

    pub fn group(&self, role: Role) -> Box<dyn Iterator<Item = &Parameter<T>> + '_> {
        match role {
            Role::Encoder => Box::new(self.encoder.params()),
            Role::Decoder => Box::new(self.decoder.params()),
        }
    }

    pub fn group_mut(&mut self, role: Role) -> Box<dyn Iterator<Item = &mut Parameter<T>> + '_> {
        match role {
            Role::Encoder => Box::new(self.encoder.params_mut()),
            Role::Decoder => Box::new(self.decoder.params_mut()),
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.encoder.params().chain(self.decoder.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.encoder.params_mut().chain(self.decoder.params_mut())
    }

    /// Stable names for every parameter, matching [`ProductAe::params`] order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (e, net) in [&self.encoder.enc1, &self.encoder.enc2]
            .into_iter()
            .enumerate()
        {
            push_net_names(&mut names, &format!("enc{}", e + 1), net);
        }
        for (t, net) in self.decoder.nets.iter().enumerate() {
            let (i, j) = (t / 2 + 1, if t % 2 == 0 { 2 } else { 1 });
            push_net_names(&mut names, &format!("dec{j}_{i}"), net);
        }
        names
    }
}

fn push_net_names<T: Real>(names: &mut Vec<String>, prefix: &str, net: &Fcnn<T>) {
    for l in 0..net.layers().len() {
        names.push(format!("{prefix}.layer{l}.weight"));
        names.push(format!("{prefix}.layer{l}.bias"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n1: 3,
            k1: 2,
            n2: 3,
            k2: 2,
            iterations: 2,
            features: 2,
            enc_hidden_layers: 1,
            enc_hidden_width: 8,
            dec_hidden_layers: 1,
            dec_hidden_width: 8,
            dec_last_hidden_layers: 1,
        }
    }

    #[test]
    fn reference_sizing_table() {
        let cfg = ModelConfig::reference_15_10();
        let shapes = cfg.decoder_shapes();
        assert_eq!(shapes.len(), 8);
        let io: Vec<(usize, usize)> = shapes.iter().map(|s| (s.input_dim, s.output_dim)).collect();
        assert_eq!(
            io,
            vec![
                (15, 45),
                (60, 45),
                (60, 45),
                (60, 45),
                (60, 45),
                (60, 45),
                (60, 30),
                (45, 10)
            ]
        );
        let layers: Vec<usize> = shapes.iter().map(|s| s.hidden_layers).collect();
        assert_eq!(layers, vec![7, 7, 7, 7, 7, 7, 9, 9]);
        assert!(shapes.iter().all(|s| s.hidden_width == 250));
    }

    #[test]
    fn single_iteration_sizing() {
        let cfg = ModelConfig {
            iterations: 1,
            ..tiny()
        };
        let io: Vec<(usize, usize)> = cfg
            .decoder_shapes()
            .iter()
            .map(|s| (s.input_dim, s.output_dim))
            .collect();
        assert_eq!(io, vec![(3, 4), (6, 2)]);
    }

    #[test]
    fn shapes_through_the_pipeline() {
        for (iterations, features) in [(1, 1), (1, 3), (2, 2), (3, 1), (4, 3)] {
            let cfg = ModelConfig {
                n1: 5,
                k1: 3,
                n2: 4,
                k2: 2,
                iterations,
                features,
                ..tiny()
            };
            let model = ProductAe::<f64>::new(cfg, 3).unwrap();
            let mut tape = Tape::new();
            let u = tape.constant(Tensor::zeros([6, 2, 3]));
            let c = model.transmit(&mut tape, u).unwrap();
            assert_eq!(tape.shape(c), &[6, 4, 5]);
            let logits = model.decoder.decode(&mut tape, c).unwrap();
            assert_eq!(tape.shape(logits), &[6, 2, 3]);
        }
    }

    #[test]
    fn wrong_shapes_are_reported() {
        let model = ProductAe::<f64>::new(tiny(), 0).unwrap();
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::zeros([2, 3, 2]));
        assert!(matches!(
            model.transmit(&mut tape, u),
            Err(Error::Dimension { .. })
        ));
        let y = tape.constant(Tensor::zeros([2, 3, 4]));
        let err = model.decoder.decode(&mut tape, y).unwrap_err().to_string();
        assert!(err.contains("stage t=1"), "{err}");
    }

    #[test]
    fn codeword_energy_is_n() {
        let model = ProductAe::<f32>::new(tiny(), 5).unwrap();
        let mut tape = Tape::new();
        let bits: Vec<f64> = (0..40).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
        let u = tape.constant(Tensor::from_f64([10, 2, 2], &bits).unwrap());
        let c = model.transmit(&mut tape, u).unwrap();
        for word in tape.value(c).data().chunks(9) {
            let e: f32 = word.iter().map(|x| x * x).sum();
            assert!((e - 9.0).abs() < 1e-5 * 9.0, "{e}");
        }
    }

    #[test]
    fn param_names_cover_every_parameter() {
        let model = ProductAe::<f64>::new(tiny(), 0).unwrap();
        let names = model.param_names();
        assert_eq!(names.len(), model.params().count());
        assert_eq!(names[0], "enc1.layer0.weight");
        assert!(names.contains(&"dec2_1.layer0.weight".to_string()));
        assert!(names.contains(&"dec1_2.layer1.bias".to_string()));
    }

    #[test]
    fn train_only_toggles_groups() {
        let mut model = ProductAe::<f64>::new(tiny(), 0).unwrap();
        model.train_only(Role::Decoder);
        assert!(model.encoder.params().all(|p| !p.requires_grad()));
        assert!(model.decoder.params().all(|p| p.requires_grad()));
        model.train_only(Role::Encoder);
        assert!(model.encoder.params().all(|p| p.requires_grad()));
        assert!(model.decoder.params().all(|p| !p.requires_grad()));
    }
}
