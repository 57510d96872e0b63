//! Central finite differences against the analytic encoder and
//! discriminator gradients, in `f64`.

use serde::Serialize;

use super::discriminator::Discriminator;
use super::encoder::{Encoder, FINGERPRINT_DIM};
use super::normalize_channels;
use super::synth::synth_triplet;
use super::train::{discriminator_objective, generator_objective, GeneratorTerms};
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamClass {
    ConvWeight,
    ConvBias,
    LinearWeight,
    LinearBias,
}

impl ParamClass {
    pub const ALL: [ParamClass; 4] = [
        ParamClass::ConvWeight,
        ParamClass::ConvBias,
        ParamClass::LinearWeight,
        ParamClass::LinearBias,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub k: usize,
    pub channels: usize,
    pub eps: f64,
    /// Parameters sampled per tensor.
    pub samples_per_tensor: usize,
    pub seed: u64,
    /// Positive equal to the anchor, no negative, no adversarial term: the
    /// encoder objective and its gradient are both zero.
    pub zero_loss: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            k: 8,
            channels: 6,
            eps: 1e-3,
            samples_per_tensor: 6,
            seed: 0,
            zero_loss: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassReport {
    pub class: ParamClass,
    pub checked: usize,
    /// Samples dropped because the perturbation moved an activation across
    /// a kink.
    pub skipped_kinks: usize,
    pub max_relative_error: f64,
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub classes: Vec<ClassReport>,
    pub max_relative_error: f64,
}

/// `|a − n| / max(|a|, |n|)`, zero when both vanish.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Weights scaled by `1/√fan_in` and small random biases so every layer
/// sees order-one activations.
fn tiny_instance(cfg: &GradCheckConfig, rng: &mut Rng) -> Result<(Encoder<f64>, Discriminator<f64>)> {
    let mut enc: Encoder<f64> = Encoder::zeros(cfg.channels, cfg.k)?;
    for l in &mut enc.layers {
        let std = 1.0 / (l.patch_len() as f64).sqrt();
        l.weight.iter_mut().for_each(|w| *w = std * rng.normal());
        l.bias.iter_mut().for_each(|b| *b = 0.1 * rng.normal());
    }
    let mut disc: Discriminator<f64> = Discriminator::zeros();
    for l in &mut disc.layers {
        let std = 1.0 / (l.inputs as f64).sqrt();
        l.weight.iter_mut().for_each(|w| *w = std * rng.normal());
        l.bias.iter_mut().for_each(|b| *b = 0.1 * rng.normal());
    }
    Ok((enc, disc))
}

struct Problem {
    encoder: Encoder<f64>,
    discriminator: Discriminator<f64>,
    input: Vec<f64>,
    real: Vec<f64>,
    terms: GeneratorTerms,
}

impl Problem {
    fn generator(&self, enc: &Encoder<f64>) -> Result<(f64, Encoder<f64>)> {
        generator_objective(enc, &self.discriminator, &self.input, 1, self.terms)?
            .map(|(s, g)| (s.loss, g))
            .ok_or(Error::ZeroNorm)
    }

    fn fake(&self) -> Result<Vec<f64>> {
        Ok(self.encoder.forward_batch(&self.input, self.terms.groups())?.0)
    }

    fn discriminator(&self, disc: &Discriminator<f64>, fake: &[f64]) -> Result<(f64, Discriminator<f64>)> {
        discriminator_objective(disc, &self.real, fake).map(|(l, _, g)| (l, g))
    }

    /// Signs of every rectifier input plus the sign of the negative cosine,
    /// the points where the objective is not differentiable.
    fn kink_signature(&self, enc: &Encoder<f64>, disc: &Discriminator<f64>) -> Result<Vec<bool>> {
        let groups = self.terms.groups();
        let (v, cache) = enc.forward_batch(&self.input, groups)?;
        let mut sig: Vec<bool> = cache.activations.iter().flatten().map(|&a| a > 0.0).collect();
        if self.terms.negative {
            let dot: f64 = v[..FINGERPRINT_DIM].iter().zip(&v[2 * FINGERPRINT_DIM..]).map(|(a, b)| a * b).sum();
            sig.push(dot > 0.0);
        }
        let both: Vec<f64> = self.real.iter().chain(&v).copied().collect();
        let (_, dcache) = disc.logits(&both, both.len() / FINGERPRINT_DIM)?;
        sig.extend(dcache.inputs[1..].iter().flatten().map(|&a| a > 0.0));
        Ok(sig)
    }
}

fn class_of(name: &str) -> ParamClass {
    match (name.starts_with("conv"), name.ends_with("weight")) {
        (true, true) => ParamClass::ConvWeight,
        (true, false) => ParamClass::ConvBias,
        (false, true) => ParamClass::LinearWeight,
        (false, false) => ParamClass::LinearBias,
    }
}

/// Checks sampled entries of every parameter tensor: encoder parameters
/// against the encoder objective, discriminator parameters against the
/// discriminator cross-entropy on the current encoder outputs.
pub fn gradient_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if cfg.k > 16 || cfg.eps <= 0.0 || cfg.samples_per_tensor == 0 {
        return Err(Error::InvalidArgument("gradient check needs k ≤ 16, eps > 0 and samples".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let (encoder, discriminator) = tiny_instance(cfg, &mut rng)?;
    let t = synth_triplet(&mut rng, cfg.k, cfg.channels, 0.5);
    let to64 = |x: &[f64]| -> Vec<f64> { normalize_channels(x, cfg.channels).into_iter().map(f64::from).collect() };
    let (input, terms) = if cfg.zero_loss {
        ([to64(&t.anchor), to64(&t.anchor)].concat(), GeneratorTerms { negative: false, adversarial: 0.0 })
    } else {
        ([to64(&t.anchor), to64(&t.positive), to64(&t.negative)].concat(), GeneratorTerms::FULL)
    };
    let real: Vec<f64> = (0..2 * FINGERPRINT_DIM).map(|_| rng.normal()).collect();
    let p = Problem {
        encoder,
        discriminator,
        input,
        real,
        terms,
    };

    let mut reports: Vec<ClassReport> = ParamClass::ALL
        .iter()
        .map(|&class| ClassReport {
            class,
            checked: 0,
            skipped_kinks: 0,
            max_relative_error: 0.0,
            max_abs_analytic: 0.0,
            max_abs_numeric: 0.0,
        })
        .collect();
    let record = |reports: &mut Vec<ClassReport>, class: ParamClass, analytic: f64, numeric: f64| {
        let r = reports.iter_mut().find(|r| r.class == class).expect("class listed");
        r.checked += 1;
        r.max_relative_error = r.max_relative_error.max(relative_error(analytic, numeric));
        r.max_abs_analytic = r.max_abs_analytic.max(analytic.abs());
        r.max_abs_numeric = r.max_abs_numeric.max(numeric.abs());
    };
    let skip = |reports: &mut Vec<ClassReport>, class: ParamClass| {
        if let Some(r) = reports.iter_mut().find(|r| r.class == class) {
            r.skipped_kinks += 1;
        }
    };
    let base_sig = p.kink_signature(&p.encoder, &p.discriminator)?;
    let attempts = 4 * cfg.samples_per_tensor;

    let (_, enc_grad) = p.generator(&p.encoder)?;
    let names: Vec<(String, usize)> = p.encoder.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    let enc_grads: Vec<Vec<f64>> = enc_grad.tensors().iter().map(|(_, g)| g.to_vec()).collect();
    for (ti, (name, len)) in names.iter().enumerate() {
        let class = class_of(name);
        let mut done = 0;
        for _ in 0..attempts {
            if done == cfg.samples_per_tensor {
                break;
            }
            let j = rng.below(*len);
            let mut plus = p.encoder.clone();
            plus.tensors_mut()[ti][j] += cfg.eps;
            let mut minus = p.encoder.clone();
            minus.tensors_mut()[ti][j] -= cfg.eps;
            if p.kink_signature(&plus, &p.discriminator)? != base_sig
                || p.kink_signature(&minus, &p.discriminator)? != base_sig
            {
                skip(&mut reports, class);
                continue;
            }
            let numeric = (p.generator(&plus)?.0 - p.generator(&minus)?.0) / (2.0 * cfg.eps);
            record(&mut reports, class, enc_grads[ti][j], numeric);
            done += 1;
        }
    }

    if !cfg.zero_loss {
        let fake = p.fake()?;
        let (_, disc_grad) = p.discriminator(&p.discriminator, &fake)?;
        let names: Vec<(String, usize)> =
            p.discriminator.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
        let disc_grads: Vec<Vec<f64>> = disc_grad.tensors().iter().map(|(_, g)| g.to_vec()).collect();
        for (ti, (name, len)) in names.iter().enumerate() {
            let class = class_of(name);
            let mut done = 0;
            for _ in 0..attempts {
                if done == cfg.samples_per_tensor {
                    break;
                }
                let j = rng.below(*len);
                let mut plus = p.discriminator.clone();
                plus.tensors_mut()[ti][j] += cfg.eps;
                let mut minus = p.discriminator.clone();
                minus.tensors_mut()[ti][j] -= cfg.eps;
                if p.kink_signature(&p.encoder, &plus)? != base_sig || p.kink_signature(&p.encoder, &minus)? != base_sig
                {
                    skip(&mut reports, class);
                    continue;
                }
                let numeric = (p.discriminator(&plus, &fake)?.0 - p.discriminator(&minus, &fake)?.0) / (2.0 * cfg.eps);
                record(&mut reports, class, disc_grads[ti][j], numeric);
                done += 1;
            }
        }
    }

    let max_relative_error = reports.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        eps: cfg.eps,
        classes: reports,
        max_relative_error,
    })
}
