//! Alternating contrastive / adversarial training on synthetic tensors.

use serde::{Deserialize, Serialize};

use super::calibration::{OutputCalibration, CALIBRATION_SAMPLES};
use super::discriminator::Discriminator;
use super::encoder::{Encoder, InitScheme, FINGERPRINT_DIM};
use super::file::EncoderFile;
use super::loss::{
    contrastive, cosine_with_grad, discriminator_accuracy, discriminator_loss, generator_adversarial, Contrastive,
};
use super::normalize_channels;
use super::optim::{Optimizer, OptimizerKind};
use super::scalar::Real;
use super::synth::{synth_anchor, synth_triplet};
use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    pub channels: usize,
    /// Standard deviation of the noise added to each positive-pair factor.
    pub alpha: f64,
    /// Triplets per generator step; real and fake vectors per
    /// discriminator step.
    pub batch_size: usize,
    pub lr: f64,
    pub discriminator_lr: f64,
    /// Steps per phase before switching between discriminator and
    /// generator.
    pub alternation_period: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub optimizer: OptimizerKind,
    /// Multiplier on the adversarial term of the encoder objective.
    pub adversarial_weight: f64,
    pub init: InitScheme,
    pub discriminator_init_std: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 64,
            channels: 6,
            alpha: 0.16,
            batch_size: 10,
            lr: 1e-4,
            discriminator_lr: 1e-4,
            alternation_period: 10,
            epochs: 16,
            steps_per_epoch: 100,
            optimizer: OptimizerKind::Sgd,
            adversarial_weight: 1.0,
            init: InitScheme::Fixed { std: 0.02 },
            discriminator_init_std: 0.02,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings that meet the locality and Gaussianity targets at `K = 64`.
    pub fn recommended(k: usize, channels: usize, seed: u64) -> Self {
        TrainConfig {
            k,
            channels,
            optimizer: OptimizerKind::Adam,
            init: InitScheme::FanIn {
                gain: std::f64::consts::SQRT_2,
                bias: 2.0,
            },
            steps_per_epoch: 125,
            adversarial_weight: 0.1,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.k),
            ("channels", self.channels),
            ("batch_size", self.batch_size),
            ("alternation_period", self.alternation_period),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(self.alpha >= 0.0 && self.lr > 0.0 && self.discriminator_lr > 0.0 && self.init.is_valid() && self.discriminator_init_std > 0.0) {
            return Err(Error::InvalidArgument("alpha, lr and init scales must be positive".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    /// Whether global step `t` trains the discriminator; phases of
    /// `alternation_period` steps alternate, discriminator first.
    pub fn is_discriminator_step(&self, t: usize) -> bool {
        (t / self.alternation_period) % 2 == 0
    }
}

/// Averages over one epoch, emitted as one JSON line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub generator_steps: usize,
    pub discriminator_steps: usize,
    pub skipped_steps: usize,
    pub contrastive_loss: f64,
    pub adversarial_loss: f64,
    pub pos_cos: f64,
    pub neg_abs_cos: f64,
    /// `pos_cos − neg_abs_cos`.
    pub separation: f64,
    pub discriminator_loss: f64,
    pub discriminator_accuracy: f64,
}

pub struct TrainOutcome {
    pub encoder: Encoder<f32>,
    pub calibration: OutputCalibration,
    pub discriminator: Discriminator<f32>,
    pub metrics: Vec<EpochMetrics>,
}

impl TrainOutcome {
    pub fn into_file(self, cfg: &TrainConfig) -> EncoderFile {
        EncoderFile::new(self.encoder, self.calibration, Some(*cfg))
    }
}

/// Streams of the training generator.
const STREAM_ENCODER_INIT: u64 = 0;
const STREAM_DISCRIMINATOR_INIT: u64 = 1;
const STREAM_TRIPLETS: u64 = 2;
const STREAM_REAL: u64 = 3;
const STREAM_CALIBRATION: u64 = 4;

pub fn initial_encoder(cfg: &TrainConfig) -> Result<Encoder<f32>> {
    Encoder::init_with(cfg.channels, cfg.k, cfg.init, &mut Rng::new(cfg.seed).fork(STREAM_ENCODER_INIT))
}

/// Output calibration fitted on the seed's own synthetic anchors.
pub fn calibrate(encoder: &Encoder<f32>, cfg: &TrainConfig) -> Result<OutputCalibration> {
    OutputCalibration::fit_synthetic(encoder, CALIBRATION_SAMPLES, &mut Rng::new(cfg.seed).fork(STREAM_CALIBRATION))
}

fn finite(what: &str, step: usize, x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Divergence {
            step,
            detail: format!("{what} is {x}"),
        })
    }
}

pub(crate) struct GeneratorStats {
    pub loss: f64,
    pub contrastive: f64,
    pub adversarial: f64,
    pub pos_cos: f64,
    pub neg_abs_cos: f64,
}

/// Which terms enter the encoder objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct GeneratorTerms {
    pub negative: bool,
    /// Weight of the adversarial term; zero drops it.
    pub adversarial: f64,
}

impl GeneratorTerms {
    pub const FULL: GeneratorTerms = GeneratorTerms {
        negative: true,
        adversarial: 1.0,
    };

    pub fn weighted(adversarial: f64) -> GeneratorTerms {
        GeneratorTerms {
            negative: true,
            adversarial,
        }
    }

    pub fn groups(&self) -> usize {
        if self.negative {
            3
        } else {
            2
        }
    }
}

/// Encoder objective on `b` triplets laid out as anchors, positives, then
/// negatives (omitted when `terms.negative` is off). Returns `None` if an
/// output has zero norm.
pub(crate) fn generator_objective<T: Real>(
    encoder: &Encoder<T>,
    discriminator: &Discriminator<T>,
    input: &[T],
    b: usize,
    terms: GeneratorTerms,
) -> Result<Option<(GeneratorStats, Encoder<T>)>> {
    let groups = terms.groups();
    let (v, cache) = encoder.forward_batch(input, groups * b)?;
    let row = |i: usize| &v[i * FINGERPRINT_DIM..(i + 1) * FINGERPRINT_DIM];
    let mut dv = vec![0.0f64; v.len()];
    let mut stats = GeneratorStats {
        loss: 0.0,
        contrastive: 0.0,
        adversarial: 0.0,
        pos_cos: 0.0,
        neg_abs_cos: 0.0,
    };
    let scale = 1.0 / b as f64;
    let add = |dv: &mut [f64], slot: usize, grad: &[f64]| {
        for (d, g) in dv[slot * FINGERPRINT_DIM..(slot + 1) * FINGERPRINT_DIM].iter_mut().zip(grad) {
            *d += g * scale;
        }
    };
    for i in 0..b {
        let c = if terms.negative {
            contrastive(row(i), row(b + i), row(2 * b + i))
        } else {
            cosine_with_grad(row(i), row(b + i)).map(|(cp, da, dp)| Contrastive {
                loss: (1.0 - cp).abs(),
                pos_cos: cp,
                neg_cos: 0.0,
                d_anchor: da.iter().map(|g| -g).collect(),
                d_pos: dp.iter().map(|g| -g).collect(),
                d_neg: Vec::new(),
            })
        };
        let c = match c {
            Ok(c) => c,
            Err(Error::ZeroNorm) => return Ok(None),
            Err(e) => return Err(e),
        };
        stats.contrastive += c.loss * scale;
        stats.pos_cos += c.pos_cos * scale;
        stats.neg_abs_cos += c.neg_cos.abs() * scale;
        add(&mut dv, i, &c.d_anchor);
        add(&mut dv, b + i, &c.d_pos);
        if terms.negative {
            add(&mut dv, 2 * b + i, &c.d_neg);
        }
    }
    let mut dv: Vec<T> = dv.into_iter().map(T::from_f64).collect();
    if terms.adversarial != 0.0 {
        let (z, dcache) = discriminator.logits(&v, groups * b)?;
        let z: Vec<f64> = z.iter().map(|x| x.as_f64()).collect();
        let (adv, dz) = generator_adversarial(&z);
        stats.adversarial = terms.adversarial * adv;
        let dz: Vec<T> = dz.into_iter().map(|g| T::from_f64(terms.adversarial * g)).collect();
        let mut scratch = discriminator.zeros_like();
        let dv_adv = discriminator.backward(&dcache, &dz, &mut scratch);
        for (d, a) in dv.iter_mut().zip(dv_adv) {
            *d = *d + a;
        }
    }
    stats.loss = stats.contrastive + stats.adversarial;
    let mut grad = encoder.zeros_like();
    encoder.backward(&cache, &dv, &mut grad);
    Ok(Some((stats, grad)))
}

/// Discriminator cross-entropy on `real` and `fake` rows; returns loss,
/// accuracy and parameter gradient.
pub(crate) fn discriminator_objective<T: Real>(
    discriminator: &Discriminator<T>,
    real: &[T],
    fake: &[T],
) -> Result<(f64, f64, Discriminator<T>)> {
    let (nr, nf) = (real.len() / FINGERPRINT_DIM, fake.len() / FINGERPRINT_DIM);
    let both: Vec<T> = real.iter().chain(fake).copied().collect();
    let (z, cache) = discriminator.logits(&both, nr + nf)?;
    let z: Vec<f64> = z.iter().map(|x| x.as_f64()).collect();
    let (loss, dr, df) = discriminator_loss(&z[..nr], &z[nr..]);
    let acc = discriminator_accuracy(&z[..nr], &z[nr..]);
    let dz: Vec<T> = dr.into_iter().chain(df).map(T::from_f64).collect();
    let mut grad = discriminator.zeros_like();
    discriminator.backward(&cache, &dz, &mut grad);
    Ok((loss, acc, grad))
}

struct Trainer {
    cfg: TrainConfig,
    encoder: Encoder<f32>,
    discriminator: Discriminator<f32>,
    enc_opt: Optimizer,
    disc_opt: Optimizer,
    triplets: Rng,
    real: Rng,
}

impl Trainer {
    fn new(cfg: TrainConfig) -> Result<Self> {
        let root = Rng::new(cfg.seed);
        let encoder = initial_encoder(&cfg)?;
        let discriminator = Discriminator::init(cfg.discriminator_init_std, &mut root.fork(STREAM_DISCRIMINATOR_INIT));
        let sizes = |t: Vec<(String, &[f32])>| t.iter().map(|(_, x)| x.len()).collect::<Vec<_>>();
        let enc_opt = Optimizer::new(cfg.optimizer, cfg.lr, &sizes(encoder.tensors()));
        let disc_opt = Optimizer::new(cfg.optimizer, cfg.discriminator_lr, &sizes(discriminator.tensors()));
        Ok(Trainer {
            cfg,
            encoder,
            discriminator,
            enc_opt,
            disc_opt,
            triplets: root.fork(STREAM_TRIPLETS),
            real: root.fork(STREAM_REAL),
        })
    }

    fn generator_step(&mut self, step: usize) -> Result<Option<GeneratorStats>> {
        let TrainConfig { k, channels, alpha, batch_size: b, .. } = self.cfg;
        let mut parts = [Vec::new(), Vec::new(), Vec::new()];
        for _ in 0..b {
            let t = synth_triplet(&mut self.triplets, k, channels, alpha);
            parts[0].extend(normalize_channels(&t.anchor, channels));
            parts[1].extend(normalize_channels(&t.positive, channels));
            parts[2].extend(normalize_channels(&t.negative, channels));
        }
        let input = parts.concat();
        let Some((stats, grad)) =
            generator_objective(&self.encoder, &self.discriminator, &input, b, GeneratorTerms::weighted(self.cfg.adversarial_weight))?
        else {
            return Ok(None);
        };
        finite("generator loss", step, stats.loss)?;
        let grads: Vec<&[f32]> = grad.tensors().into_iter().map(|(_, g)| g).collect();
        self.enc_opt.update(self.encoder.tensors_mut(), grads);
        Ok(Some(stats))
    }

    fn discriminator_step(&mut self, step: usize) -> Result<(f64, f64)> {
        let TrainConfig { k, channels, batch_size: b, .. } = self.cfg;
        let input: Vec<f32> = (0..b)
            .flat_map(|_| normalize_channels(&synth_anchor(&mut self.triplets, k, channels), channels))
            .collect();
        let (fake, _) = self.encoder.forward_batch(&input, b)?;
        let real: Vec<f32> = (0..b * FINGERPRINT_DIM).map(|_| self.real.normal() as f32).collect();
        let (loss, acc, grad) = discriminator_objective(&self.discriminator, &real, &fake)?;
        finite("discriminator loss", step, loss)?;
        let grads: Vec<&[f32]> = grad.tensors().into_iter().map(|(_, g)| g).collect();
        self.disc_opt.update(self.discriminator.tensors_mut(), grads);
        Ok((loss, acc))
    }
}

/// Trains encoder and discriminator; `on_epoch` receives each epoch's
/// averages as soon as the epoch ends. Training inputs come only from the
/// seeded generator.
pub fn train_fpm(cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut tr = Trainer::new(*cfg)?;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut t = 0;
    for epoch in 0..cfg.epochs {
        let mut m = EpochMetrics {
            epoch,
            ..Default::default()
        };
        for _ in 0..cfg.steps_per_epoch {
            if cfg.is_discriminator_step(t) {
                let (loss, acc) = tr.discriminator_step(t)?;
                m.discriminator_steps += 1;
                m.discriminator_loss += loss;
                m.discriminator_accuracy += acc;
            } else {
                match tr.generator_step(t)? {
                    Some(s) => {
                        m.generator_steps += 1;
                        m.contrastive_loss += s.contrastive;
                        m.adversarial_loss += s.adversarial;
                        m.pos_cos += s.pos_cos;
                        m.neg_abs_cos += s.neg_abs_cos;
                    }
                    None => m.skipped_steps += 1,
                }
            }
            t += 1;
        }
        let g = m.generator_steps.max(1) as f64;
        let d = m.discriminator_steps.max(1) as f64;
        m.contrastive_loss /= g;
        m.adversarial_loss /= g;
        m.pos_cos /= g;
        m.neg_abs_cos /= g;
        m.separation = m.pos_cos - m.neg_abs_cos;
        m.discriminator_loss /= d;
        m.discriminator_accuracy /= d;
        on_epoch(&m);
        metrics.push(m);
    }
    Ok(TrainOutcome {
        calibration: calibrate(&tr.encoder, cfg)?,
        encoder: tr.encoder,
        discriminator: tr.discriminator,
        metrics,
    })
}

/// Held-out locality statistics of an encoder on fresh synthetic triplets.
#[derive(Debug, Clone, Serialize)]
pub struct HeldOutReport {
    pub triplets: usize,
    pub mean_pos_cos: f64,
    pub mean_abs_neg_cos: f64,
    /// Fraction of triplets with `cos(v, v⁺) > cos(v, v⁻)`.
    pub ordered_fraction: f64,
    #[serde(skip)]
    pub anchor_outputs: Vec<Vec<f32>>,
}

pub fn evaluate_held_out(
    model: &EncoderFile,
    cfg: &TrainConfig,
    triplets: usize,
    rng: &mut Rng,
) -> Result<HeldOutReport> {
    const CHUNK: usize = 25;
    let (k, c) = (cfg.k, cfg.channels);
    let mut report = HeldOutReport {
        triplets,
        mean_pos_cos: 0.0,
        mean_abs_neg_cos: 0.0,
        ordered_fraction: 0.0,
        anchor_outputs: Vec::with_capacity(triplets),
    };
    let mut done = 0;
    while done < triplets {
        let n = CHUNK.min(triplets - done);
        let mut parts = [Vec::new(), Vec::new(), Vec::new()];
        for _ in 0..n {
            let t = synth_triplet(rng, k, c, cfg.alpha);
            parts[0].extend(normalize_channels(&t.anchor, c));
            parts[1].extend(normalize_channels(&t.positive, c));
            parts[2].extend(normalize_channels(&t.negative, c));
        }
        let outs = parts
            .iter()
            .map(|p| {
                let (mut v, _) = model.encoder.forward_batch(p, n)?;
                v.chunks_exact_mut(FINGERPRINT_DIM).for_each(|r| model.calibration.apply(r));
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        for i in 0..n {
            let r = |o: usize| &outs[o][i * FINGERPRINT_DIM..(i + 1) * FINGERPRINT_DIM];
            let cp = cosine_similarity(r(0), r(1))?;
            let cn = cosine_similarity(r(0), r(2))?;
            report.mean_pos_cos += cp;
            report.mean_abs_neg_cos += cn.abs();
            report.ordered_fraction += f64::from(u8::from(cp > cn));
            report.anchor_outputs.push(r(0).to_vec());
        }
        done += n;
    }
    let n = triplets.max(1) as f64;
    report.mean_pos_cos /= n;
    report.mean_abs_neg_cos /= n;
    report.ordered_fraction /= n;
    Ok(report)
}
