//! Adversarial training loop and test-time residual extraction.

use std::time::Instant;

use ndarray::{Array2, Array3, ArrayD};
use rand::{seq::SliceRandom, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{ParamId, ParamSet};
use super::loss::{critic_batch_loss, generator_batch_loss};
use super::model::{NetworkConfig, Networks, ShapeSignature};
use super::tensor::Tape;
use crate::correlation::ModelSample;
use crate::{Error, Result};

/// Mean loss components of one epoch. Generator terms average over the
/// epoch's generator updates, critic terms over its critic updates; a term
/// with no updates that epoch is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub generator_total: f64,
    pub contextual: f64,
    pub latent: f64,
    pub adversarial: f64,
    pub critic_total: f64,
    pub wasserstein: f64,
    pub penalty: f64,
}

/// A trained model: networks plus per-epoch loss history. Wall-clock times
/// are kept out of checkpoints so artefacts stay byte-reproducible.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub networks: Networks,
    pub history: Vec<EpochLoss>,
    pub wall_secs: Vec<f64>,
}

/// Per-step residuals produced at test time: the absolute first-channel
/// reconstruction error and the absolute latent error.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRecord {
    pub step_index: usize,
    pub contextual: Array2<f64>,
    pub latent: Vec<f64>,
}

struct Adam {
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    t: usize,
    lr: f64,
    beta1: f64,
    beta2: f64,
}

const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(params: &ParamSet, ids: &[ParamId], lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            m: ids
                .iter()
                .map(|&id| ArrayD::zeros(params.value(id).raw_dim()))
                .collect(),
            v: ids
                .iter()
                .map(|&id| ArrayD::zeros(params.value(id).raw_dim()))
                .collect(),
            t: 0,
            lr,
            beta1,
            beta2,
        }
    }

    fn step(&mut self, params: &mut ParamSet, ids: &[ParamId], grads: &[Option<ArrayD<f64>>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (slot, (&id, grad)) in ids.iter().zip(grads).enumerate() {
            let Some(g) = grad else { continue };
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            });
            let target = params.value_mut(id);
            ndarray::Zip::from(target).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= self.lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
            });
        }
    }
}

fn check_finite(value: f64, epoch: usize, component: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            epoch,
            component: component.to_string(),
        })
    }
}

struct Accumulator {
    sum: [f64; 4],
    count: usize,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            sum: [0.0; 4],
            count: 0,
        }
    }

    fn push(&mut self, values: [f64; 4]) {
        for (s, v) in self.sum.iter_mut().zip(values) {
            *s += v;
        }
        self.count += 1;
    }

    fn mean(&self, i: usize) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum[i] / self.count as f64
        }
    }
}

/// Trains the four networks on `samples` with the alternating schedule:
/// within each epoch, every group of `critic_iters + 1` shuffled batches
/// spends its first batches on critic updates and its last on one joint
/// generator update (both encoders and the decoder). Fully deterministic
/// under a fixed seed. Returns the initialised model untouched when
/// `config.epochs` is zero.
pub fn train(samples: &[ModelSample], config: &NetworkConfig, seed: u64) -> Result<TrainedModel> {
    if samples.is_empty() {
        return Err(Error::Argument("no training samples".into()));
    }
    if samples.len() < config.batch_size {
        return Err(Error::Argument(format!(
            "{} samples do not fill one batch of {}",
            samples.len(),
            config.batch_size
        )));
    }
    let signature = ShapeSignature::of_sample(&samples[0]);
    for s in samples {
        signature.check_sample(s)?;
    }
    let mut nets = Networks::init(config, signature, seed)?;
    let gen_ids = nets.generator_param_ids();
    let critic_ids = nets.critic_param_ids();
    let mut adam_gen = Adam::new(
        &nets.params,
        &gen_ids,
        config.learning_rate,
        config.beta1,
        config.beta2,
    );
    let mut adam_critic = Adam::new(
        &nets.params,
        &critic_ids,
        config.learning_rate,
        config.beta1,
        config.beta2,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = Vec::with_capacity(config.epochs);
    let mut wall_secs = Vec::with_capacity(config.epochs);
    let bs = config.batch_size;
    let batches = samples.len() / bs;
    let group = config.critic_iters + 1;

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);

        let mut gen_acc = Accumulator::new();
        let mut critic_acc = Accumulator::new();

        for batch_idx in 0..batches {
            let batch: Vec<&ModelSample> = order[batch_idx * bs..(batch_idx + 1) * bs]
                .iter()
                .map(|&i| &samples[i])
                .collect();
            // Last batch of each group (and the trailing partial group)
            // updates the generator; the rest update the critic.
            let pos = batch_idx % group;
            let is_generator = pos == group - 1 || batch_idx == batches - 1;

            if is_generator {
                let mut tape = Tape::new();
                let bound = nets.params.bind(&mut tape);
                let parts = generator_batch_loss(&mut tape, &nets, &bound, &batch);
                let values = [
                    tape.scalar(parts.total),
                    tape.scalar(parts.contextual),
                    tape.scalar(parts.latent),
                    tape.scalar(parts.adversarial),
                ];
                check_finite(values[1], epoch, "contextual")?;
                check_finite(values[2], epoch, "latent")?;
                check_finite(values[3], epoch, "adversarial")?;
                let wrt: Vec<_> = gen_ids.iter().map(|&id| bound.var(id)).collect();
                let grads = tape.grad(parts.total, &wrt);
                let grad_values: Vec<Option<ArrayD<f64>>> = grads
                    .into_iter()
                    .map(|g| g.map(|g| tape.value(g).clone()))
                    .collect();
                adam_gen.step(&mut nets.params, &gen_ids, &grad_values);
                gen_acc.push(values);
            } else {
                // Fakes from the frozen generator.
                let mut fake_tape = Tape::new();
                let frozen = nets.params.bind_frozen(&mut fake_tape);
                let fakes: Vec<Array3<f64>> = batch
                    .iter()
                    .map(|s| {
                        let pass = nets.generator_pass(&mut fake_tape, &frozen, s);
                        let (c, n) = (signature.channels, signature.n);
                        fake_tape
                            .value(pass.recon)
                            .clone()
                            .into_shape_with_order((c, n, n))
                            .expect("reconstruction shape")
                    })
                    .collect();
                let interpolation: Vec<f64> =
                    (0..batch.len()).map(|_| rng.random_range(0.0..1.0)).collect();

                let mut tape = Tape::new();
                let bound = nets.params.bind(&mut tape);
                let real: Vec<&Array3<f64>> = batch.iter().map(|s| &s.current).collect();
                let fake_refs: Vec<&Array3<f64>> = fakes.iter().collect();
                let parts = critic_batch_loss(
                    &mut tape,
                    &nets,
                    &bound,
                    &real,
                    &fake_refs,
                    &interpolation,
                    config.gp_coefficient,
                );
                let values = [
                    tape.scalar(parts.total),
                    tape.scalar(parts.wasserstein),
                    tape.scalar(parts.penalty),
                    0.0,
                ];
                check_finite(values[1], epoch, "wasserstein")?;
                check_finite(values[2], epoch, "gradient penalty")?;
                let wrt: Vec<_> = critic_ids.iter().map(|&id| bound.var(id)).collect();
                let grads = tape.grad(parts.total, &wrt);
                let grad_values: Vec<Option<ArrayD<f64>>> = grads
                    .into_iter()
                    .map(|g| g.map(|g| tape.value(g).clone()))
                    .collect();
                adam_critic.step(&mut nets.params, &critic_ids, &grad_values);
                critic_acc.push(values);
            }
        }

        history.push(EpochLoss {
            epoch,
            generator_total: gen_acc.mean(0),
            contextual: gen_acc.mean(1),
            latent: gen_acc.mean(2),
            adversarial: gen_acc.mean(3),
            critic_total: critic_acc.mean(0),
            wasserstein: critic_acc.mean(1),
            penalty: critic_acc.mean(2),
        });
        wall_secs.push(start.elapsed().as_secs_f64());
    }

    Ok(TrainedModel {
        networks: nets,
        history,
        wall_secs,
    })
}

impl TrainedModel {
    /// Runs the trained generator over `samples` and returns per-step
    /// residuals: `|current channel 0 - reconstruction channel 0|` and
    /// `|latent - re-encoded latent|`, aligned one-to-one with the input.
    pub fn reconstruct(&self, samples: &[ModelSample]) -> Result<Vec<ResidualRecord>> {
        let nets = &self.networks;
        for s in samples {
            nets.signature.check_sample(s)?;
        }
        let n = nets.signature.n;
        let mut records = Vec::with_capacity(samples.len());
        for sample in samples {
            let mut tape = Tape::new();
            let bound = nets.params.bind_frozen(&mut tape);
            let pass = nets.generator_pass(&mut tape, &bound, sample);
            let recon = tape.value(pass.recon);
            let mut contextual = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    contextual[[i, j]] = (sample.current[[0, i, j]] - recon[[0, i, j]]).abs();
                }
            }
            let latent: Vec<f64> = tape
                .value(pass.latent)
                .iter()
                .zip(tape.value(pass.latent2).iter())
                .map(|(a, b)| (a - b).abs())
                .collect();
            records.push(ResidualRecord {
                step_index: sample.step_index,
                contextual,
                latent,
            });
        }
        Ok(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{build_samples, compute_mcm, McmConfig, SeasonalConfig};
    use crate::series::HolidayCalendar;
    use crate::synth::{gen_seasonal_mts, SeasonalityMode};
    use ndarray::Array3;

    fn tiny_samples(n: usize, t_len: usize, seed: u64) -> Vec<ModelSample> {
        let (mts, _) = gen_seasonal_mts(n, t_len, SeasonalityMode::Random, seed).unwrap();
        let mcm = compute_mcm(&mts, &McmConfig::default()).unwrap();
        build_samples(
            &mcm,
            2,
            &SeasonalConfig::default(),
            &HolidayCalendar::none(t_len),
        )
        .unwrap()
    }

    fn smoke_config() -> NetworkConfig {
        NetworkConfig {
            batch_size: 8,
            epochs: 2,
            critic_iters: 2,
            ..NetworkConfig::miniature()
        }
    }

    #[test]
    fn zero_epochs_returns_initialised_model_with_empty_history() {
        let samples = tiny_samples(4, 400, 1);
        let mut config = smoke_config();
        config.epochs = 0;
        let model = train(&samples, &config, 7).unwrap();
        assert!(model.history.is_empty());
        let fresh = Networks::init(&config, model.networks.signature, 7).unwrap();
        for (id_a, id_b) in model.networks.params.ids().zip(fresh.params.ids()) {
            assert_eq!(model.networks.params.value(id_a), fresh.params.value(id_b));
        }
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let samples = tiny_samples(4, 400, 2);
        let config = smoke_config();
        let a = train(&samples, &config, 11).unwrap();
        let b = train(&samples, &config, 11).unwrap();
        for (id_a, id_b) in a.networks.params.ids().zip(b.networks.params.ids()) {
            assert_eq!(a.networks.params.value(id_a), b.networks.params.value(id_b));
        }
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn different_seeds_differ() {
        let samples = tiny_samples(4, 400, 3);
        let config = smoke_config();
        let a = train(&samples, &config, 1).unwrap();
        let b = train(&samples, &config, 2).unwrap();
        let same = a
            .networks
            .params
            .ids()
            .zip(b.networks.params.ids())
            .all(|(ia, ib)| a.networks.params.value(ia) == b.networks.params.value(ib));
        assert!(!same);
    }

    #[test]
    fn training_reduces_contextual_loss_on_constant_data() {
        // Constant inputs: reconstruction converges quickly via the biases.
        let base = tiny_samples(4, 400, 4);
        let samples: Vec<ModelSample> = base
            .iter()
            .map(|s| ModelSample {
                current: Array3::from_elem(s.current.dim(), 0.5),
                history: s
                    .history
                    .iter()
                    .map(|m| Array3::from_elem(m.dim(), 0.5))
                    .collect(),
                seasonal: Vec::new(),
                holiday_bits: s.holiday_bits.clone(),
                step_index: s.step_index,
            })
            .collect();
        let config = NetworkConfig {
            batch_size: 8,
            epochs: 25,
            critic_iters: 2,
            learning_rate: 5e-3,
            ..NetworkConfig::miniature()
        };
        let model = train(&samples, &config, 5).unwrap();
        let first = model.history.first().unwrap().contextual;
        let last = model.history.last().unwrap().contextual;
        assert!(
            last < 0.7 * first,
            "contextual loss did not drop: {first} -> {last}"
        );
    }

    #[test]
    fn history_records_every_epoch_with_timing() {
        let samples = tiny_samples(4, 400, 6);
        let config = smoke_config();
        let model = train(&samples, &config, 3).unwrap();
        assert_eq!(model.history.len(), 2);
        assert_eq!(model.wall_secs.len(), 2);
        assert!(model.history.iter().enumerate().all(|(i, e)| e.epoch == i));
        assert!(model.wall_secs.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn too_few_samples_for_a_batch_errors() {
        let samples = tiny_samples(4, 400, 7);
        let config = NetworkConfig {
            batch_size: 10_000,
            ..smoke_config()
        };
        assert!(matches!(
            train(&samples, &config, 1),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn divergence_guard_names_epoch_and_component() {
        let err = check_finite(f64::NAN, 17, "contextual").unwrap_err();
        match err {
            Error::Divergence { epoch, component } => {
                assert_eq!(epoch, 17);
                assert_eq!(component, "contextual");
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(check_finite(f64::INFINITY, 0, "penalty").is_err());
        assert!(check_finite(1.0, 0, "penalty").is_ok());
    }

    #[test]
    fn residual_records_align_with_input_steps() {
        let samples = tiny_samples(4, 400, 8);
        let mut config = smoke_config();
        config.epochs = 1;
        let model = train(&samples, &config, 9).unwrap();
        let records = model.reconstruct(&samples[..5]).unwrap();
        assert_eq!(records.len(), 5);
        for (r, s) in records.iter().zip(&samples) {
            assert_eq!(r.step_index, s.step_index);
            assert_eq!(r.contextual.dim(), (4, 4));
            assert_eq!(r.latent.len(), model.networks.latent_dim());
            assert!(r.contextual.iter().all(|&v| v >= 0.0));
            assert!(r.latent.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn zero_sample_residual_equals_absolute_reconstruction() {
        let samples = tiny_samples(4, 400, 10);
        let mut config = smoke_config();
        config.epochs = 1;
        let model = train(&samples, &config, 12).unwrap();
        let zero = ModelSample {
            current: Array3::zeros(samples[0].current.dim()),
            history: samples[0]
                .history
                .iter()
                .map(|m| Array3::zeros(m.dim()))
                .collect(),
            seasonal: Vec::new(),
            holiday_bits: samples[0].holiday_bits.clone(),
            step_index: 0,
        };
        let recon = model.networks.reconstruct_sample(&zero).unwrap();
        let record = &model.reconstruct(std::slice::from_ref(&zero)).unwrap()[0];
        for i in 0..4 {
            for j in 0..4 {
                assert!((record.contextual[[i, j]] - recon[[0, i, j]].abs()).abs() < 1e-12);
            }
        }
    }
}
