//! The adversarial reconstruction model: a convolutional-recurrent encoder,
//! a deconvolutional decoder with per-level attention skip connections, a
//! second encoder over the reconstruction, and a convolutional critic.

use ndarray::{Array3, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{attention_fuse, Bound, ConvLayer, ConvLstm, DeconvLayer, ParamId, ParamSet};
use super::tensor::{ConvAttrs, Tape, Var};
use crate::correlation::ModelSample;
use crate::{Error, Result};

/// One encoder level: filter count, square kernel size, and stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// How the generator's adversarial term is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialMode {
    /// Squared distance between mean critic feature maps of real and
    /// reconstructed inputs.
    FeatureMatching,
    /// Negated raw critic score of the reconstruction.
    CriticScore,
}

/// Architecture and optimisation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub conv_layers: Vec<ConvLayerSpec>,
    /// Recurrent state channels per level; empty mirrors `conv_layers`.
    pub recurrent_channels: Vec<usize>,
    /// Softmax rescaling factor of the attention scores.
    pub attention_rescale: f64,
    /// Weights of the contextual, latent, and adversarial generator losses.
    pub loss_weights: [f64; 3],
    /// Gradient-penalty coefficient.
    pub gp_coefficient: f64,
    /// Critic updates per generator update.
    pub critic_iters: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adversarial_mode: AdversarialMode,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            conv_layers: vec![
                ConvLayerSpec { filters: 32, kernel: 3, stride: 2 },
                ConvLayerSpec { filters: 64, kernel: 3, stride: 2 },
                ConvLayerSpec { filters: 128, kernel: 3, stride: 1 },
            ],
            recurrent_channels: Vec::new(),
            attention_rescale: 5.0,
            loss_weights: [50.0, 1.0, 1.0],
            gp_coefficient: 10.0,
            critic_iters: 5,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            epochs: 300,
            batch_size: 32,
            adversarial_mode: AdversarialMode::FeatureMatching,
        }
    }
}

impl NetworkConfig {
    /// A narrow stack sized for single-core runs and tests.
    pub fn compact() -> Self {
        Self {
            conv_layers: vec![
                ConvLayerSpec { filters: 8, kernel: 3, stride: 2 },
                ConvLayerSpec { filters: 16, kernel: 3, stride: 2 },
                ConvLayerSpec { filters: 32, kernel: 3, stride: 1 },
            ],
            ..Self::default()
        }
    }

    /// A two-level miniature used by gradient checks.
    pub fn miniature() -> Self {
        Self {
            conv_layers: vec![
                ConvLayerSpec { filters: 4, kernel: 3, stride: 2 },
                ConvLayerSpec { filters: 4, kernel: 3, stride: 1 },
            ],
            epochs: 5,
            batch_size: 4,
            ..Self::default()
        }
    }

    /// Recurrent channels per level with the empty default resolved.
    pub fn recurrent(&self) -> Vec<usize> {
        if self.recurrent_channels.is_empty() {
            self.conv_layers.iter().map(|l| l.filters).collect()
        } else {
            self.recurrent_channels.clone()
        }
    }

    /// Spatial sizes per level for an `n x n` input (level 0 is the input).
    pub fn spatial_chain(&self, n: usize) -> Vec<usize> {
        let mut sizes = vec![n];
        for layer in &self.conv_layers {
            let prev = *sizes.last().unwrap();
            let pad = layer.kernel / 2;
            sizes.push((prev + 2 * pad - layer.kernel) / layer.stride + 1);
        }
        sizes
    }

    pub fn validate_for(&self, n: usize, channels: usize) -> Result<()> {
        if self.conv_layers.is_empty() {
            return Err(Error::Config("at least one conv layer required".into()));
        }
        if !self.recurrent_channels.is_empty()
            && self.recurrent_channels.len() != self.conv_layers.len()
        {
            return Err(Error::Config(format!(
                "{} recurrent channel entries for {} levels",
                self.recurrent_channels.len(),
                self.conv_layers.len()
            )));
        }
        for (i, layer) in self.conv_layers.iter().enumerate() {
            if layer.kernel % 2 == 0 || layer.kernel == 0 {
                return Err(Error::Config(format!(
                    "level {i}: kernel must be odd, got {}",
                    layer.kernel
                )));
            }
            if layer.stride == 0 || layer.filters == 0 {
                return Err(Error::Config(format!("level {i}: zero stride or filters")));
            }
        }
        if channels == 0 {
            return Err(Error::Config("input needs at least one channel".into()));
        }
        for (i, &s) in self.spatial_chain(n).iter().enumerate() {
            if s == 0 {
                return Err(Error::Config(format!(
                    "spatial size collapses to zero at level {i} for n={n}"
                )));
            }
        }
        let [w1, w2, w3] = self.loss_weights;
        if w1 < 0.0 || w2 < 0.0 || w3 < 0.0 || (w1 == 0.0 && w2 == 0.0 && w3 == 0.0) {
            return Err(Error::Config(
                "loss weights must be non-negative and not all zero".into(),
            ));
        }
        if self.gp_coefficient <= 0.0 {
            return Err(Error::Config("gradient-penalty coefficient must be positive".into()));
        }
        if self.critic_iters == 0 {
            return Err(Error::Config("critic_iters must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }

    /// Flattened size of the deepest fused state for an `n x n` input.
    pub fn latent_dim(&self, n: usize) -> usize {
        let spatial = self.spatial_chain(n);
        let deepest = *spatial.last().unwrap();
        *self.recurrent().last().unwrap() * deepest * deepest
    }
}

/// Input dimensions a trained model is committed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeSignature {
    pub n: usize,
    pub channels: usize,
    pub history: usize,
    pub seasonal: usize,
}

impl ShapeSignature {
    pub fn of_sample(sample: &ModelSample) -> Self {
        let shape = sample.current.dim();
        Self {
            n: shape.1,
            channels: shape.0,
            history: sample.history.len(),
            seasonal: sample.seasonal.len(),
        }
    }

    pub fn stacked_steps(&self) -> usize {
        self.history + self.seasonal + 1
    }

    pub fn check_sample(&self, sample: &ModelSample) -> Result<()> {
        let (c, n, n2) = sample.current.dim();
        if n != n2 {
            return Err(Error::Config(format!("non-square step matrix {n}x{n2}")));
        }
        if n != self.n {
            return Err(Error::Config(format!("series count {n}, model expects {}", self.n)));
        }
        if c != self.channels {
            return Err(Error::Config(format!(
                "{c} channels, model expects {}",
                self.channels
            )));
        }
        if sample.history.len() != self.history {
            return Err(Error::Config(format!(
                "history length {}, model expects {}",
                sample.history.len(),
                self.history
            )));
        }
        if sample.seasonal.len() != self.seasonal {
            return Err(Error::Config(format!(
                "seasonal length {}, model expects {}",
                sample.seasonal.len(),
                self.seasonal
            )));
        }
        if sample.holiday_bits.len() != self.stacked_steps() {
            return Err(Error::Config(format!(
                "{} holiday bits for {} stacked steps",
                sample.holiday_bits.len(),
                self.stacked_steps()
            )));
        }
        for (i, m) in sample.stacked().enumerate() {
            if m.dim() != (c, n, n) {
                return Err(Error::Config(format!(
                    "stacked step {i} has shape {:?}, expected ({c},{n},{n})",
                    m.dim()
                )));
            }
        }
        Ok(())
    }
}

/// Convolutional-recurrent encoder over stacked steps.
#[derive(Debug, Clone)]
pub struct EncoderNet {
    convs: Vec<ConvLayer>,
    cells: Vec<ConvLstm>,
}

/// Outcome of one encoder pass.
pub struct Encoded {
    /// Attention-fused hidden state per level.
    pub fused: Vec<Var>,
    /// Flattened deepest fused state.
    pub latent: Var,
}

impl EncoderNet {
    fn new(
        params: &mut ParamSet,
        prefix: &str,
        channels: usize,
        n: usize,
        config: &NetworkConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let spatial = config.spatial_chain(n);
        let recurrent = config.recurrent();
        let mut convs = Vec::new();
        let mut cells = Vec::new();
        let mut in_ch = channels;
        for (i, layer) in config.conv_layers.iter().enumerate() {
            let attrs = ConvAttrs {
                in_channels: in_ch,
                in_h: spatial[i],
                in_w: spatial[i],
                out_channels: layer.filters,
                kernel: layer.kernel,
                stride: layer.stride,
                pad: layer.kernel / 2,
            };
            convs.push(ConvLayer::new(
                params,
                &format!("{prefix}.conv{i}"),
                attrs,
                rng,
            ));
            cells.push(ConvLstm::new(
                params,
                &format!("{prefix}.lstm{i}"),
                layer.filters,
                recurrent[i],
                spatial[i + 1],
                spatial[i + 1],
                layer.kernel,
                rng,
            ));
            in_ch = layer.filters;
        }
        Self { convs, cells }
    }

    /// Runs the stack over `steps` (temporal order, current last) and fuses
    /// each level's hidden states by attention with `bits` masking.
    pub fn run(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        steps: &[Var],
        bits: &[bool],
        rescale: f64,
    ) -> Encoded {
        let levels = self.convs.len();
        let mut states: Vec<(Var, Var)> = self
            .cells
            .iter()
            .map(|cell| cell.zero_state(tape))
            .collect();
        let mut hiddens: Vec<Vec<Var>> = vec![Vec::with_capacity(steps.len()); levels];
        for &step in steps {
            let mut x = step;
            for level in 0..levels {
                let f = self.convs[level].forward(tape, bound, x);
                let f = tape.tanh(f);
                let (h, c) = self.cells[level].step(tape, bound, f, states[level]);
                states[level] = (h, c);
                hiddens[level].push(h);
                x = f;
            }
        }
        let fused: Vec<Var> = hiddens
            .iter()
            .map(|seq| attention_fuse(tape, seq, bits, rescale).0)
            .collect();
        let latent = tape.flatten(*fused.last().unwrap());
        Encoded { fused, latent }
    }
}

/// Deconvolutional decoder with per-level fused-state skip connections.
#[derive(Debug, Clone)]
pub struct DecoderNet {
    /// Top-down: `deconvs[0]` upsamples the deepest level.
    deconvs: Vec<DeconvLayer>,
    deepest_shape: (usize, usize, usize),
}

impl DecoderNet {
    fn new(
        params: &mut ParamSet,
        prefix: &str,
        channels: usize,
        n: usize,
        config: &NetworkConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let spatial = config.spatial_chain(n);
        let recurrent = config.recurrent();
        let levels = config.conv_layers.len();
        let mut deconvs = Vec::new();
        for level in (0..levels).rev() {
            let in_channels = if level == levels - 1 {
                recurrent[level]
            } else {
                config.conv_layers[level].filters + recurrent[level]
            };
            let out_channels = if level == 0 {
                channels
            } else {
                config.conv_layers[level - 1].filters
            };
            deconvs.push(DeconvLayer::new(
                params,
                &format!("{prefix}.deconv{level}"),
                in_channels,
                out_channels,
                spatial[level],
                spatial[level],
                config.conv_layers[level].kernel,
                config.conv_layers[level].stride,
                rng,
            ));
        }
        let deepest = *spatial.last().unwrap();
        Self {
            deconvs,
            deepest_shape: (*recurrent.last().unwrap(), deepest, deepest),
        }
    }

    /// Reconstructs the current step from the latent vector and the fused
    /// states of the shallower levels. Intermediate deconvolutions are
    /// tanh-activated and concatenated with the matching fused state; the
    /// final layer is linear.
    pub fn run(&self, tape: &mut Tape, bound: &Bound, latent: Var, fused: &[Var]) -> Var {
        let (c, h, w) = self.deepest_shape;
        let mut x = tape.reshape(latent, &[c, h, w]);
        let levels = self.deconvs.len();
        for (i, deconv) in self.deconvs.iter().enumerate() {
            let level = levels - 1 - i; // level this deconv upsamples from
            let y = deconv.forward(tape, bound, x);
            if level == 0 {
                return y;
            }
            let y = tape.tanh(y);
            x = tape.concat(y, fused[level - 1], 0);
        }
        unreachable!("decoder always returns at level 0");
    }
}

/// Convolutional critic; the last layer's activations are the feature map
/// used for feature matching.
#[derive(Debug, Clone)]
pub struct CriticNet {
    convs: Vec<ConvLayer>,
    head_w: ParamId,
    head_b: ParamId,
    feat_len: usize,
}

const CRITIC_LEAK: f64 = 0.2;

impl CriticNet {
    fn new(
        params: &mut ParamSet,
        prefix: &str,
        channels: usize,
        n: usize,
        config: &NetworkConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let spatial = config.spatial_chain(n);
        let mut convs = Vec::new();
        let mut in_ch = channels;
        for (i, layer) in config.conv_layers.iter().enumerate() {
            let attrs = ConvAttrs {
                in_channels: in_ch,
                in_h: spatial[i],
                in_w: spatial[i],
                out_channels: layer.filters,
                kernel: layer.kernel,
                stride: layer.stride,
                pad: layer.kernel / 2,
            };
            convs.push(ConvLayer::new(
                params,
                &format!("{prefix}.conv{i}"),
                attrs,
                rng,
            ));
            in_ch = layer.filters;
        }
        let deepest = *spatial.last().unwrap();
        let feat_len = in_ch * deepest * deepest;
        let head_w = params.add(
            format!("{prefix}.head.w"),
            super::layers::glorot(&[1, feat_len], feat_len, 1, rng),
        );
        let head_b = params.add(format!("{prefix}.head.b"), ArrayD::zeros(IxDyn(&[1])));
        Self {
            convs,
            head_w,
            head_b,
            feat_len,
        }
    }

    /// Returns the scalar critic score and the last-layer feature map.
    pub fn run(&self, tape: &mut Tape, bound: &Bound, x: Var) -> (Var, Var) {
        let mut y = x;
        for conv in &self.convs {
            y = conv.forward(tape, bound, y);
            y = tape.leaky_relu(y, CRITIC_LEAK);
        }
        let features = y;
        let flat = tape.reshape(features, &[self.feat_len]);
        let score_vec = tape.matvec(bound.var(self.head_w), flat);
        let b = bound.var(self.head_b);
        let score_vec = tape.add(score_vec, b);
        let score = tape.reshape(score_vec, &[]);
        (score, features)
    }

    /// Spatial mean of each feature channel, for feature matching.
    pub fn mean_features(&self, tape: &mut Tape, features: Var) -> Var {
        let shape = tape.value(features).shape().to_vec();
        let pooled = tape.sum_spatial(features);
        tape.scale(pooled, 1.0 / (shape[1] * shape[2]) as f64)
    }
}

/// All four networks plus their parameter store.
#[derive(Debug, Clone)]
pub struct Networks {
    pub params: ParamSet,
    pub gen_encoder: EncoderNet,
    pub decoder: DecoderNet,
    pub aux_encoder: EncoderNet,
    pub critic: CriticNet,
    pub config: NetworkConfig,
    pub signature: ShapeSignature,
}

impl Networks {
    /// Initialises all parameters from `seed` for the given input shape.
    pub fn init(config: &NetworkConfig, signature: ShapeSignature, seed: u64) -> Result<Self> {
        config.validate_for(signature.n, signature.channels)?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen_encoder = EncoderNet::new(
            &mut params,
            "gen.enc",
            signature.channels,
            signature.n,
            config,
            &mut rng,
        );
        let decoder = DecoderNet::new(
            &mut params,
            "gen.dec",
            signature.channels,
            signature.n,
            config,
            &mut rng,
        );
        let aux_encoder = EncoderNet::new(
            &mut params,
            "aux.enc",
            signature.channels,
            signature.n,
            config,
            &mut rng,
        );
        let critic = CriticNet::new(
            &mut params,
            "critic",
            signature.channels,
            signature.n,
            config,
            &mut rng,
        );
        Ok(Self {
            params,
            gen_encoder,
            decoder,
            aux_encoder,
            critic,
            config: config.clone(),
            signature,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim(self.signature.n)
    }

    /// Parameter ids of the generator side (both encoders and the decoder).
    pub fn generator_param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for enc in [&self.gen_encoder, &self.aux_encoder] {
            for conv in &enc.convs {
                ids.push(conv.w);
                ids.push(conv.b);
            }
            for cell in &enc.cells {
                ids.push(cell.wx);
                ids.push(cell.wh);
                ids.push(cell.b);
            }
        }
        for deconv in &self.decoder.deconvs {
            ids.push(deconv.w);
            ids.push(deconv.b);
        }
        ids
    }

    /// Parameter ids of the critic.
    pub fn critic_param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for conv in &self.critic.convs {
            ids.push(conv.w);
            ids.push(conv.b);
        }
        ids.push(self.critic.head_w);
        ids.push(self.critic.head_b);
        ids
    }

    /// Places the stacked steps of a sample on the tape as constants.
    pub fn stack_sample(&self, tape: &mut Tape, sample: &ModelSample) -> Vec<Var> {
        sample
            .stacked()
            .map(|m| tape.constant(m.clone().into_dyn()))
            .collect()
    }

    /// Full generator pass on the tape: encode, decode, re-encode.
    pub fn generator_pass(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        sample: &ModelSample,
    ) -> GeneratorPass {
        let steps = self.stack_sample(tape, sample);
        let rescale = self.config.attention_rescale;
        let enc = self
            .gen_encoder
            .run(tape, bound, &steps, &sample.holiday_bits, rescale);
        let recon = self.decoder.run(tape, bound, enc.latent, &enc.fused);
        let enc2 = self.aux_encoder.run(tape, bound, &[recon], &[true], rescale);
        GeneratorPass {
            recon,
            latent: enc.latent,
            latent2: enc2.latent,
        }
    }

    /// Encodes one sample in inference mode, returning the latent vector and
    /// each level's fused hidden state.
    pub fn encode(&self, sample: &ModelSample) -> Result<(Vec<f64>, Vec<ArrayD<f64>>)> {
        self.signature.check_sample(sample)?;
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let steps = self.stack_sample(&mut tape, sample);
        let enc = self.gen_encoder.run(
            &mut tape,
            &bound,
            &steps,
            &sample.holiday_bits,
            self.config.attention_rescale,
        );
        let latent = tape.value(enc.latent).iter().copied().collect();
        let fused = enc.fused.iter().map(|&f| tape.value(f).clone()).collect();
        Ok((latent, fused))
    }

    /// Reconstructs the current step of one sample in inference mode.
    pub fn reconstruct_sample(&self, sample: &ModelSample) -> Result<Array3<f64>> {
        self.signature.check_sample(sample)?;
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let pass = self.generator_pass(&mut tape, &bound, sample);
        let value = tape.value(pass.recon).clone();
        let (c, n) = (self.signature.channels, self.signature.n);
        Ok(value
            .into_shape_with_order((c, n, n))
            .expect("reconstruction has the current-step shape"))
    }
}

/// Tape nodes produced by one generator pass.
pub struct GeneratorPass {
    /// Reconstructed current step, `channels x n x n`.
    pub recon: Var,
    /// Latent vector of the input.
    pub latent: Var,
    /// Latent vector of the reconstruction through the second encoder.
    pub latent2: Var,
}
